//! Von Mises(-Fisher) machinery on the circle: Bessel functions, the mean
//! resultant length A(kappa) and its inverse, rejection sampling, KL
//! divergences in closed form and by Monte Carlo, and the vMF approximation
//! to the normalized sum of two equally concentrated samples.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::sphere::UnitVector;

const PI: f64 = core::f64::consts::PI;
const TAU: f64 = core::f64::consts::TAU;

/// Switch point between the power series and the asymptotic expansion.
const BESSEL_SWITCH: f64 = 15.0;

/// Mean direction (as an angle) and concentration of a circular vMF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mean_angle: f64,
    pub kappa: f64,
}

impl VmfParams {
    pub fn new(mean_angle: f64, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::OutOfRange {
                what: "kappa",
                value: kappa,
            });
        }
        if !mean_angle.is_finite() {
            return Err(Error::OutOfRange {
                what: "mean_angle",
                value: mean_angle,
            });
        }
        Ok(VmfParams { mean_angle, kappa })
    }
}

/// vMF approximation to the normalized sum of two equally concentrated
/// vMF variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumVmfApprox {
    pub mean_angle: f64,
    pub kappa_tilde: f64,
}

fn bessel_series(x: f64, order: u32) -> f64 {
    // I_v(x) = (x/2)^v sum_k (x^2/4)^k / (k! (k+v)!)
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40u32 {
        term *= q / (k as f64 * (k + order) as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    if order == 1 {
        sum * x / 2.0
    } else {
        sum
    }
}

/// Sum of the large-argument expansion e^x/sqrt(2 pi x) * S; returns S.
fn bessel_asymptotic_series(x: f64, order: u32) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=12u32 {
        let k = k as f64;
        term *= -(mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * x);
        sum += term;
    }
    sum
}

fn bessel(x: f64, order: u32) -> f64 {
    if x <= BESSEL_SWITCH {
        bessel_series(x, order)
    } else {
        libm::exp(x) / libm::sqrt(TAU * x) * bessel_asymptotic_series(x, order)
    }
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(kappa: f64) -> f64 {
    bessel(kappa, 0)
}

/// Modified Bessel function of the first kind, order one.
pub fn bessel_i1(kappa: f64) -> f64 {
    bessel(kappa, 1)
}

/// log I0(kappa), stable for large arguments where I0 itself overflows.
pub fn log_bessel_i0(kappa: f64) -> f64 {
    if kappa <= BESSEL_SWITCH {
        libm::log(bessel_series(kappa, 0))
    } else {
        kappa - 0.5 * libm::log(TAU * kappa) + libm::log(bessel_asymptotic_series(kappa, 0))
    }
}

/// A(kappa) = I1/I0: the expected resultant length of a circular vMF.
pub fn mean_resultant(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    if kappa <= BESSEL_SWITCH {
        bessel_series(kappa, 1) / bessel_series(kappa, 0)
    } else {
        // The exponential prefactors cancel in the ratio.
        bessel_asymptotic_series(kappa, 1) / bessel_asymptotic_series(kappa, 0)
    }
}

/// Inverse of [`mean_resultant`] on [0, 1): Banerjee-style initial guess,
/// then safeguarded Newton iterations using A'(k) = 1 - A^2 - A/k.
pub fn mean_resultant_inverse(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::OutOfRange {
            what: "mean resultant length",
            value: r,
        });
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let mut k = r * (2.0 - r * r) / (1.0 - r * r);
    // Bracket for the bisection safeguard.
    let (mut lo, mut hi) = (0.0_f64, k.max(1.0));
    while mean_resultant(hi) < r {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        if !(lo..=hi).contains(&k) {
            k = 0.5 * (lo + hi);
        }
        let a = mean_resultant(k);
        let diff = a - r;
        if diff.abs() < 1e-10 {
            return Ok(k);
        }
        if diff > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let da = 1.0 - a * a - a / k;
        if da > 0.0 {
            k -= diff / da;
        } else {
            k = 0.5 * (lo + hi);
        }
    }
    Ok(k)
}

/// One draw from the circular vMF via the Best–Fisher wrapped-Cauchy
/// rejection sampler; returns an angle.
pub(crate) fn sample_angle<R: Rng>(p: &VmfParams, rng: &mut R) -> f64 {
    if p.kappa == 0.0 {
        return wrap_angle(rng.random::<f64>() * TAU);
    }
    let tau = 1.0 + libm::sqrt(1.0 + 4.0 * p.kappa * p.kappa);
    let rho = (tau - libm::sqrt(2.0 * tau)) / (2.0 * p.kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = libm::cos(PI * u1);
        let f = (1.0 + r * z) / (r + z);
        let c = p.kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || libm::log(c / u2) + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let sign = if u3 > 0.5 { 1.0 } else { -1.0 };
            return wrap_angle(p.mean_angle + sign * libm::acos(f));
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = libm::fmod(theta, TAU);
    if t < 0.0 {
        t += TAU;
    }
    t
}

/// n seeded draws from the circular vMF, returned as 2-d unit vectors.
pub fn vmf_sample_2d(p: &VmfParams, n: usize, seed: u64) -> Vec<UnitVector> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let a = sample_angle(p, &mut rng);
            UnitVector::new(alloc::vec![libm::cos(a), libm::sin(a)]).expect("unit by construction")
        })
        .collect()
}

/// Exact KL divergence between two circular vMF distributions:
/// log I0(k2) - log I0(k1) + A(k1) (k1 - k2 cos(mu1 - mu2)).
pub fn vmf_kl_closed(p1: &VmfParams, p2: &VmfParams) -> f64 {
    let a1 = mean_resultant(p1.kappa);
    log_bessel_i0(p2.kappa) - log_bessel_i0(p1.kappa)
        + a1 * (p1.kappa - p2.kappa * libm::cos(p1.mean_angle - p2.mean_angle))
}

fn log_pdf(theta: f64, p: &VmfParams) -> f64 {
    p.kappa * libm::cos(theta - p.mean_angle) - libm::log(TAU) - log_bessel_i0(p.kappa)
}

/// Monte-Carlo KL estimate: mean of log p1 - log p2 over `n` samples from
/// p1, with its sample standard error.
pub fn vmf_kl_monte_carlo(p1: &VmfParams, p2: &VmfParams, n: usize, seed: u64) -> Result<(f64, f64)> {
    if n < 1000 {
        return Err(Error::OutOfRange {
            what: "monte carlo sample count (min 1000)",
            value: n as f64,
        });
    }
    let mut rng = seeded(seed);
    // Welford accumulation of mean and variance.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let theta = sample_angle(p1, &mut rng);
        let x = log_pdf(theta, p1) - log_pdf(theta, p2);
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok((mean, libm::sqrt(var / n as f64)))
}

/// vMF fit to the normalized sum of two independent draws with equal
/// concentration: mean = direction of the summed means,
/// kappa_tilde = A^-1(A(kappa)^2).
pub fn sum_vmf_approx(p1: &VmfParams, p2: &VmfParams) -> Result<SumVmfApprox> {
    if (p1.kappa - p2.kappa).abs() > 1e-12 {
        return Err(Error::OutOfRange {
            what: "sum approximation requires equal kappa; got difference",
            value: p1.kappa - p2.kappa,
        });
    }
    let x = libm::cos(p1.mean_angle) + libm::cos(p2.mean_angle);
    let y = libm::sin(p1.mean_angle) + libm::sin(p2.mean_angle);
    let norm = libm::sqrt(x * x + y * y);
    if norm < 1e-9 {
        return Err(Error::UndefinedDirection);
    }
    let a = mean_resultant(p1.kappa);
    Ok(SumVmfApprox {
        mean_angle: wrap_angle(libm::atan2(y, x)),
        kappa_tilde: mean_resultant_inverse(a * a)?,
    })
}

/// Result of one hardness-inequality check: the mixture of two vMF
/// variables should be closer (in KL) to either original than the
/// originals are to each other, once concentration is high enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub kappa: f64,
    pub delta_mu: f64,
    /// KL from the first distribution to the fitted sum distribution.
    pub kl_mixed: f64,
    /// KL between the two original distributions.
    pub kl_cross: f64,
    /// Monte-Carlo estimate of kl_mixed (independent cross-check).
    pub mc_estimate: f64,
    pub mc_std_error: f64,
    pub holds: bool,
}

/// Evaluates KL(p1 || sum approx) against KL(p1 || p2) and cross-checks
/// the former by Monte Carlo.
pub fn theorem1_check(kappa: f64, mu1: f64, mu2: f64, n: usize, seed: u64) -> Result<TheoremCheck> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::OutOfRange {
            what: "kappa",
            value: kappa,
        });
    }
    let p1 = VmfParams::new(wrap_angle(mu1), kappa)?;
    let p2 = VmfParams::new(wrap_angle(mu2), kappa)?;
    let approx = sum_vmf_approx(&p1, &p2)?;
    let p_mix = VmfParams::new(approx.mean_angle, approx.kappa_tilde)?;
    let kl_mixed = vmf_kl_closed(&p1, &p_mix);
    let kl_cross = vmf_kl_closed(&p1, &p2);
    let (mc_estimate, mc_std_error) = vmf_kl_monte_carlo(&p1, &p_mix, n, seed)?;
    Ok(TheoremCheck {
        kappa,
        delta_mu: libm::fabs(wrap_angle(mu1 - mu2).min(TAU - wrap_angle(mu1 - mu2))),
        kl_mixed,
        kl_cross,
        mc_estimate,
        mc_std_error,
        holds: kl_mixed <= kl_cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_at_zero() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert_eq!(bessel_i1(0.0), 0.0);
    }

    #[test]
    fn bessel_i0_at_one() {
        assert!((bessel_i0(1.0) - 1.2660658777520084).abs() < 1e-10);
    }

    #[test]
    fn bessel_branches_agree_at_switch_point() {
        for x in [14.5, 15.0, 15.5, 16.0] {
            let s0 = bessel_series(x, 0);
            let a0 = libm::exp(x) / libm::sqrt(TAU * x) * bessel_asymptotic_series(x, 0);
            assert!((s0 - a0).abs() / s0 < 1e-9, "i0 at {x}");
            let s1 = bessel_series(x, 1);
            let a1 = libm::exp(x) / libm::sqrt(TAU * x) * bessel_asymptotic_series(x, 1);
            assert!((s1 - a1).abs() / s1 < 1e-9, "i1 at {x}");
        }
    }

    #[test]
    fn two_term_asymptotic_close_at_kappa_100() {
        let x = 100.0;
        let two_term = libm::exp(x) / libm::sqrt(TAU * x) * (1.0 + 1.0 / (8.0 * x));
        assert!((bessel_i0(x) - two_term).abs() / bessel_i0(x) < 0.002);
    }

    #[test]
    fn mean_resultant_values() {
        assert_eq!(mean_resultant(0.0), 0.0);
        assert!((mean_resultant(2.0) - 0.6977746).abs() < 1e-6);
    }

    #[test]
    fn mean_resultant_inverse_round_trip() {
        for kappa in [0.5, 2.0, 10.0, 50.0] {
            let k = mean_resultant_inverse(mean_resultant(kappa)).unwrap();
            assert!((k - kappa).abs() < 1e-6, "kappa {kappa} -> {k}");
        }
        assert!(mean_resultant_inverse(1.0).is_err());
        assert_eq!(mean_resultant_inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn monotone_mean_resultant_grid() {
        let mut prev = -1.0;
        for i in 0..100 {
            let a = mean_resultant(i as f64);
            assert!(a > prev && a < 1.0);
            prev = a;
        }
    }

    fn resultant(samples: &[UnitVector]) -> (f64, f64) {
        let (mut x, mut y) = (0.0, 0.0);
        for s in samples {
            x += s.as_slice()[0];
            y += s.as_slice()[1];
        }
        let n = samples.len() as f64;
        let r = libm::sqrt(x * x + y * y) / n;
        (r, libm::atan2(y, x))
    }

    #[test]
    fn uniform_sampling_has_tiny_resultant() {
        let p = VmfParams::new(0.0, 0.0).unwrap();
        let s = vmf_sample_2d(&p, 100_000, 1);
        assert!(resultant(&s).0 < 0.02);
    }

    #[test]
    fn concentrated_sampling_matches_a_kappa() {
        let p = VmfParams::new(1.0, 50.0).unwrap();
        let s = vmf_sample_2d(&p, 100_000, 2);
        let (r, ang) = resultant(&s);
        assert!((r - mean_resultant(50.0)).abs() < 0.01);
        assert!((ang - 1.0).abs() < 0.01);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = VmfParams::new(0.3, 5.0).unwrap();
        assert_eq!(vmf_sample_2d(&p, 100, 7), vmf_sample_2d(&p, 100, 7));
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = VmfParams::new(0.7, 3.0).unwrap();
        assert!(vmf_kl_closed(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn kl_equal_kappa_quarter_turn() {
        let p1 = VmfParams::new(0.0, 2.0).unwrap();
        let p2 = VmfParams::new(PI / 2.0, 2.0).unwrap();
        let expected = 2.0 * mean_resultant(2.0);
        let kl = vmf_kl_closed(&p1, &p2);
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 1.39555).abs() < 1e-4);
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let p1 = VmfParams::new(0.0, 2.0).unwrap();
        let p2 = VmfParams::new(PI / 2.0, 2.0).unwrap();
        let (est, se) = vmf_kl_monte_carlo(&p1, &p2, 1_000_000, 3).unwrap();
        assert!((est - vmf_kl_closed(&p1, &p2)).abs() < 3.0 * se);
        let (est0, se0) = vmf_kl_monte_carlo(&p1, &p1, 100_000, 4).unwrap();
        assert!(est0.abs() <= 3.0 * se0.max(1e-12));
    }

    #[test]
    fn monte_carlo_error_scaling() {
        let p1 = VmfParams::new(0.0, 2.0).unwrap();
        let p2 = VmfParams::new(1.0, 5.0).unwrap();
        let (_, se1) = vmf_kl_monte_carlo(&p1, &p2, 50_000, 5).unwrap();
        let (_, se2) = vmf_kl_monte_carlo(&p1, &p2, 200_000, 5).unwrap();
        let ratio = se1 / se2;
        assert!((ratio - 2.0).abs() < 0.2);
    }

    #[test]
    fn sum_approx_shapes() {
        let p = VmfParams::new(0.5, 50.0).unwrap();
        let same = sum_vmf_approx(&p, &p).unwrap();
        assert!((same.mean_angle - 0.5).abs() < 1e-12);
        assert!(same.kappa_tilde < 50.0);
        let anti = VmfParams::new(0.5 + PI, 50.0).unwrap();
        assert!(matches!(
            sum_vmf_approx(&p, &anti),
            Err(Error::UndefinedDirection)
        ));
    }

    #[test]
    fn sum_approx_matches_sampled_sums() {
        let kappa = 50.0;
        let p1 = VmfParams::new(0.0, kappa).unwrap();
        let p2 = VmfParams::new(PI / 3.0, kappa).unwrap();
        let approx = sum_vmf_approx(&p1, &p2).unwrap();
        let s1 = vmf_sample_2d(&p1, 100_000, 10);
        let s2 = vmf_sample_2d(&p2, 100_000, 11);
        let (mut x, mut y) = (0.0, 0.0);
        for (a, b) in s1.iter().zip(&s2) {
            let sx = a.as_slice()[0] + b.as_slice()[0];
            let sy = a.as_slice()[1] + b.as_slice()[1];
            let n = libm::sqrt(sx * sx + sy * sy);
            x += sx / n;
            y += sy / n;
        }
        let n = s1.len() as f64;
        let r = libm::sqrt(x * x + y * y) / n;
        let ang = libm::atan2(y, x);
        assert!((ang - approx.mean_angle).abs() < 0.01);
        // The squared-resultant rule understates the concentration of the
        // normalized-sum samples (which is closer to 2*kappa), so only the
        // ordering is asserted: the approximation never claims more
        // concentration than the samples show, and stays below kappa.
        assert!(r > mean_resultant(approx.kappa_tilde));
        assert!(approx.kappa_tilde <= kappa);
    }

    #[test]
    fn hardness_inequality_in_concentrated_regime() {
        for kappa in [20.0, 50.0, 100.0, 200.0] {
            for dmu in [PI / 6.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
                let c = theorem1_check(kappa, 0.0, dmu, 10_000, 42).unwrap();
                assert!(c.holds, "kappa {kappa} dmu {dmu}");
                assert!(c.kl_mixed >= -1e-12 && c.kl_cross >= -1e-12);
            }
        }
    }

    #[test]
    fn kl_nonnegative_random_pairs() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(99);
        for i in 0..20 {
            let k1 = 0.5 + rng.random::<f64>() * 99.5;
            let k2 = 0.5 + rng.random::<f64>() * 99.5;
            let m1 = rng.random::<f64>() * TAU;
            let m2 = rng.random::<f64>() * TAU;
            let p1 = VmfParams::new(m1, k1).unwrap();
            let p2 = VmfParams::new(m2, k2).unwrap();
            let kl = vmf_kl_closed(&p1, &p2);
            assert!(kl >= -1e-12);
            let (est, se) = vmf_kl_monte_carlo(&p1, &p2, 200_000, 100 + i).unwrap();
            assert!((est - kl).abs() < 3.0 * se.max(1e-9), "pair {i}: {est} vs {kl} se {se}");
        }
    }
}
