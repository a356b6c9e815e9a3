//! Scalar distribution helpers shared across modules.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// `Φ⁻¹(u)` for `u` in `(0, 1)`; infinite at the endpoints.
pub fn norm_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * u)
}

/// Student-t density with `nu` degrees of freedom.
pub fn student_t_pdf(x: f64, nu: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp()
}

pub fn student_t_cdf(x: f64, nu: f64) -> f64 {
    StudentsT::new(0.0, 1.0, nu).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw with the given shape and rate.
pub fn gamma_rate<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

/// Inverse-gamma draw, `1 / Gamma(shape, rate = scale)`.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma_rate(rng, shape, scale)
}

/// Draw from `N(mean, sd²)` truncated to `[0, ∞)`.
///
/// Inverse-CDF on the upper tail; when the truncation point sits more than
/// five standard deviations above the mean, exponential rejection
/// (Robert, 1995) is used instead.
pub fn truncated_normal_positive<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let a = -mean / sd;
    if a < 5.0 {
        let pa = norm_sf(a);
        // sample the upper-tail probability directly to avoid cancellation
        let u: f64 = rng.gen::<f64>();
        let tail = (u * pa).max(f64::MIN_POSITIVE);
        let z = -norm_quantile(tail);
        (mean + sd * z.max(a)).max(0.0)
    } else {
        let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = -rng.gen::<f64>().ln() / alpha;
            let z = a + e;
            let rho = (-(z - alpha).powi(2) / 2.0).exp();
            if rng.gen::<f64>() <= rho {
                return mean + sd * z;
            }
        }
    }
}

/// Draw from the generalized inverse Gaussian density proportional to
/// `x^(lambda-1) exp(-(chi/x + psi x)/2)`.
///
/// Gamma-envelope rejection on `x` (when `lambda > 0`) or on `1/x`
/// otherwise. When the envelope is poor the draw is replaced by a slice
/// sampling move from `current`, which keeps the target invariant.
pub fn gig<R: Rng + ?Sized>(rng: &mut R, lambda: f64, chi: f64, psi: f64, current: f64) -> f64 {
    const MAX_TRIES: usize = 200;
    if lambda > 0.0 && psi > 0.0 {
        for _ in 0..MAX_TRIES {
            let x = gamma_rate(rng, lambda, psi / 2.0);
            if x > 0.0 && rng.gen::<f64>() <= (-chi / (2.0 * x)).exp() {
                return x;
            }
        }
    } else if lambda < 0.0 && chi > 0.0 {
        for _ in 0..MAX_TRIES {
            let y = gamma_rate(rng, -lambda, chi / 2.0);
            if y > 0.0 && rng.gen::<f64>() <= (-psi / (2.0 * y)).exp() {
                return 1.0 / y;
            }
        }
    }
    let log_target = |lx: f64| {
        let x = lx.exp();
        lambda * lx - 0.5 * (chi / x + psi * x)
    };
    let mut lx = current.max(f64::MIN_POSITIVE).ln();
    for _ in 0..5 {
        lx = slice_step(rng, lx, 1.0, &log_target);
    }
    lx.exp()
}

/// One univariate slice-sampling update with stepping out.
pub fn slice_step<R: Rng + ?Sized>(rng: &mut R, x0: f64, width: f64, log_f: &impl Fn(f64) -> f64) -> f64 {
    let f0 = log_f(x0);
    let level = f0 + rng.gen::<f64>().ln();
    let mut lo = x0 - width * rng.gen::<f64>();
    let mut hi = lo + width;
    let mut steps = 0;
    while log_f(lo) > level && steps < 100 {
        lo -= width;
        steps += 1;
    }
    steps = 0;
    while log_f(hi) > level && steps < 100 {
        hi += width;
        steps += 1;
    }
    loop {
        let x = lo + (hi - lo) * rng.gen::<f64>();
        if log_f(x) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-14 {
            return x0;
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Effective sample size from the initial positive sequence of autocorrelations.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(chain);
    let c0 = chain.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| {
        chain[..n - lag]
            .iter()
            .zip(&chain[lag..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    n as f64 / (1.0 + 2.0 * sum).max(1e-12)
}

/// Sample quantile with linear interpolation between order statistics
/// (`sorted` ascending, `p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
