//! Implicit Gaussian copula process built on the reservoir features.
//!
//! With `S = diag(ψ_t)` and `ψ_t = (1 + b_t'b_t/τ²)^{-1/2}`, the normal
//! scores satisfy `z | β ~ N(S B β, S²)`, so the likelihood given `β` costs
//! O(T) and the T×T correlation `R = S(I + BB'/τ²)S` is never formed except
//! by the small-sample evaluator used for validation.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::MarginModel;
use crate::reservoir::DesignMatrix;
use crate::rng::{substream, Rng};
use crate::stats;

pub const TARGET_ACCEPTANCE: f64 = 0.44;

/// Weibull prior on `tau2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeibullTau2Prior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for WeibullTau2Prior {
    fn default() -> Self {
        Self { shape: 0.5, scale: 2.5 }
    }
}

impl WeibullTau2Prior {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Weibull prior needs positive shape and scale, got {} and {}",
                self.shape, self.scale
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let r = x / self.scale;
        (self.shape / self.scale).ln() + (self.shape - 1.0) * r.ln() - r.powf(self.shape)
    }
}

/// Retained `(β, τ²)` draws. The copula is scale free, so there is no `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaDraws {
    /// `n_draw × p`.
    pub beta: DMatrix<f64>,
    pub tau2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopulaFit {
    pub beta_mean: Vec<f64>,
    pub tau2_mean: f64,
    pub draws: CopulaDraws,
    /// Identifier of the margin whose normal scores were fitted.
    pub margin_ref: String,
    /// Post-burn-in acceptance rate of the `tau2` move.
    pub acceptance: f64,
    pub ess_tau2: f64,
    pub warnings: Vec<String>,
}

impl CopulaFit {
    /// A fit from given parameters (no draws), e.g. a data-generating truth.
    pub fn from_params(beta: Vec<f64>, tau2: f64, margin_ref: impl Into<String>) -> Self {
        let p = beta.len();
        Self {
            draws: CopulaDraws {
                beta: DMatrix::from_row_slice(1, p, &beta),
                tau2: vec![tau2],
            },
            beta_mean: beta,
            tau2_mean: tau2,
            margin_ref: margin_ref.into(),
            acceptance: f64::NAN,
            ess_tau2: f64::NAN,
            warnings: Vec::new(),
        }
    }
}

/// `ψ = (1 + ‖b‖²/τ²)^{-1/2}`.
pub fn psi_scale(b_row: &[f64], tau2: f64) -> Result<f64> {
    if !(tau2 > 0.0) {
        return Err(Error::Domain(format!("tau2 must be positive, got {tau2}")));
    }
    let ss: f64 = b_row.iter().map(|v| v * v).sum();
    Ok(psi_from_norm2(ss, tau2))
}

#[inline]
fn psi_from_norm2(norm2: f64, tau2: f64) -> f64 {
    1.0 / (1.0 + norm2 / tau2).sqrt()
}

fn row_norms(b: &DMatrix<f64>) -> Vec<f64> {
    (0..b.nrows()).map(|i| b.row(i).norm_squared()).collect()
}

fn loglik_from_parts(z: &[f64], mean_lin: &[f64], norms: &[f64], tau2: f64) -> f64 {
    let mut acc = 0.0;
    for t in 0..z.len() {
        let psi = psi_from_norm2(norms[t], tau2);
        let u = (z[t] - psi * mean_lin[t]) / psi;
        acc += stats::norm_logpdf(u) - psi.ln();
    }
    acc
}

/// `Σ_t [log φ((z_t − ψ_t b_t'β)/ψ_t) − log ψ_t]`; the margin-ratio term is
/// constant in `(β, τ²)` and left out.
pub fn conditional_loglik(b: &DesignMatrix, z: &[f64], beta: &[f64], tau2: f64) -> Result<f64> {
    if b.nrows() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            got: z.len(),
            context: "normal scores vs design rows",
        });
    }
    if b.ncols() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: b.ncols(),
            got: beta.len(),
            context: "coefficients vs design columns",
        });
    }
    if !(tau2 > 0.0) {
        return Err(Error::Domain(format!("tau2 must be positive, got {tau2}")));
    }
    if z.iter().chain(beta).chain(b.matrix.iter()).any(|v| !v.is_finite()) || !tau2.is_finite() {
        return Err(Error::InvalidInput("non-finite input to the copula likelihood".into()));
    }
    let m = &b.matrix * DVector::from_column_slice(beta);
    Ok(loglik_from_parts(z, m.as_slice(), &row_norms(&b.matrix), tau2))
}

/// Full log-likelihood of `y`: the conditional term plus `Σ log p_Y(y_t)/φ(z_t)`.
pub fn full_loglik(b: &DesignMatrix, y: &[f64], beta: &[f64], tau2: f64, margin: &MarginModel) -> Result<f64> {
    let z: Vec<f64> = y.iter().map(|&v| margin.normal_score(v)).collect();
    let ratio: f64 = y
        .iter()
        .zip(&z)
        .map(|(&v, &zz)| margin.pdf(v).ln() - stats::norm_logpdf(zz))
        .sum();
    Ok(conditional_loglik(b, &z, beta, tau2)? + ratio)
}

/// Copula correlation `R = S(I + BB'/τ²)S` (validation only; O(T²) memory).
pub fn copula_correlation(b: &DesignMatrix, tau2: f64) -> Result<DMatrix<f64>> {
    if !(tau2 > 0.0) {
        return Err(Error::Domain(format!("tau2 must be positive, got {tau2}")));
    }
    let x = &b.matrix;
    let t = x.nrows();
    let mut r = x * x.transpose() / tau2;
    for i in 0..t {
        r[(i, i)] += 1.0;
    }
    let s: Vec<f64> = row_norms(x).iter().map(|&n| psi_from_norm2(n, tau2)).collect();
    for i in 0..t {
        for j in 0..t {
            r[(i, j)] *= s[i] * s[j];
        }
    }
    Ok(r)
}

/// `log c_ESN(u | X, τ²) = log φ(z; 0, R) − Σ log φ₁(z_t)` evaluated directly.
pub fn direct_copula_log_density(b: &DesignMatrix, z: &[f64], tau2: f64) -> Result<f64> {
    let r = copula_correlation(b, tau2)?;
    let n = z.len();
    let chol = Cholesky::new(r).ok_or_else(|| Error::Numeric("copula correlation not positive definite".into()))?;
    let zv = DVector::from_column_slice(z);
    let sol = chol.solve(&zv);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_mvn = -0.5 * zv.dot(&sol) - 0.5 * log_det - n as f64 * stats::LN_SQRT_2PI;
    Ok(log_mvn - z.iter().map(|&v| stats::norm_logpdf(v)).sum::<f64>())
}

/// MCMC over `(β, τ²)`: a Gibbs step for `β` and adaptive random-walk
/// Metropolis on `log τ²`, adapted toward 0.44 acceptance during burn-in only.
pub fn mcmc_copula(
    b: &DesignMatrix,
    z: &[f64],
    prior: &WeibullTau2Prior,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
) -> Result<CopulaFit> {
    prior.validate()?;
    let t = z.len();
    let p = b.ncols();
    if b.nrows() != t {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            got: t,
            context: "normal scores vs design rows",
        });
    }
    if p == 0 || t == 0 {
        return Err(Error::InvalidDimension("empty design".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("normal scores contain non-finite values".into()));
    }
    if b.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design contains non-finite values".into()));
    }
    if n_burn >= n_iter {
        return Err(Error::InvalidConfig(format!(
            "n_burn ({n_burn}) must be below n_iter ({n_iter})"
        )));
    }
    let mut rng = substream(seed, &[]);
    let x = &b.matrix;
    let norms = row_norms(x);
    let eig = SymmetricEigen::new(x.tr_mul(x));
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition of B'B failed".into()));
    }
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let q = eig.eigenvectors;

    let n_draw = n_iter - n_burn;
    let mut beta_draws = DMatrix::zeros(n_draw, p);
    let mut tau2_draws = Vec::with_capacity(n_draw);

    let mut tau2: f64 = 1.0;
    let mut log_step: f64 = 0.0;
    let mut accepted = 0usize;
    let mut z_tilde = DVector::zeros(t);
    let mut gamma = DVector::zeros(p);

    let log_target = |tau2: f64, mean_lin: &[f64], bb: f64| -> f64 {
        loglik_from_parts(z, mean_lin, &norms, tau2) + 0.5 * p as f64 * tau2.ln() - 0.5 * tau2 * bb
            + prior.log_density(tau2)
            + tau2.ln()
    };

    for iter in 0..n_iter {
        // beta | tau2, z
        for i in 0..t {
            z_tilde[i] = z[i] / psi_from_norm2(norms[i], tau2);
        }
        let qtz = q.tr_mul(&x.tr_mul(&z_tilde));
        for i in 0..p {
            let d = lam[i] + tau2;
            gamma[i] = qtz[i] / d + stats::std_normal(&mut rng) / d.sqrt();
        }
        let beta = &q * &gamma;
        let bb = beta.norm_squared();
        let mean_lin = x * &beta;

        // log tau2 | beta, z
        let cur = log_target(tau2, mean_lin.as_slice(), bb);
        let proposal = (tau2.ln() + log_step.exp() * stats::std_normal(&mut rng)).exp();
        let mut acc = false;
        if proposal > 0.0 && proposal.is_finite() {
            let prop = log_target(proposal, mean_lin.as_slice(), bb);
            if rng.gen::<f64>().ln() < prop - cur {
                tau2 = proposal;
                acc = true;
            }
        }
        if iter < n_burn {
            let rate = 1.0 / ((iter + 1) as f64).sqrt();
            log_step += rate.min(0.5) * (f64::from(u8::from(acc)) - TARGET_ACCEPTANCE);
        } else {
            accepted += usize::from(acc);
            let k = iter - n_burn;
            beta_draws.row_mut(k).copy_from(&beta.transpose());
            tau2_draws.push(tau2);
        }
    }

    let acceptance = accepted as f64 / n_draw as f64;
    let mut warnings = Vec::new();
    if !(0.05..=0.9).contains(&acceptance) {
        let msg = format!("tau2 acceptance rate {acceptance:.3} is outside [0.05, 0.9]");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let beta_mean = (0..p).map(|j| beta_draws.column(j).mean()).collect();
    Ok(CopulaFit {
        beta_mean,
        tau2_mean: stats::mean(&tau2_draws),
        ess_tau2: stats::effective_sample_size(&tau2_draws),
        draws: CopulaDraws {
            beta: beta_draws,
            tau2: tau2_draws,
        },
        margin_ref: String::new(),
        acceptance,
        warnings,
    })
}

/// `(ψ, μ)` for one feature row, with `μ = ψ b'β`.
pub fn location_for(b_row: &[f64], beta: &[f64], tau2: f64) -> (f64, f64) {
    let ss: f64 = b_row.iter().map(|v| v * v).sum();
    let psi = psi_from_norm2(ss, tau2);
    let lin: f64 = b_row.iter().zip(beta).map(|(b, c)| b * c).sum();
    (psi, psi * lin)
}

/// [`location_for`] at the plug-in posterior means.
pub fn predictive_location(b_row: &[f64], fit: &CopulaFit) -> (f64, f64) {
    location_for(b_row, &fit.beta_mean, fit.tau2_mean)
}

/// Predictive density of `y` for explicit `(β, τ²)`.
pub fn density_for(y: f64, b_row: &[f64], beta: &[f64], tau2: f64, margin: &MarginModel) -> f64 {
    if !(y >= margin.lower_y && y <= margin.upper_y) {
        return 0.0;
    }
    let (psi, mu) = location_for(b_row, beta, tau2);
    let z = margin.normal_score(y);
    let log_ratio = stats::norm_logpdf((z - mu) / psi) - psi.ln() - stats::norm_logpdf(z);
    margin.pdf(y) * log_ratio.exp()
}

/// Predictive density of `y` by change of variables from the normal score.
pub fn copula_predictive_density(y: f64, b_row: &[f64], fit: &CopulaFit, margin: &MarginModel) -> f64 {
    density_for(y, b_row, &fit.beta_mean, fit.tau2_mean, margin)
}

/// Predictive draw for explicit `(β, τ²)`; returns `(y, z)`.
pub fn draw_for(b_row: &[f64], beta: &[f64], tau2: f64, margin: &MarginModel, rng: &mut Rng) -> (f64, f64) {
    let (psi, mu) = location_for(b_row, beta, tau2);
    let z = mu + psi * stats::std_normal(rng);
    (margin.from_normal_score(z), z)
}

/// Draws `z ~ N(μ, ψ²)` and maps it through the margin; returns `(y, z)`.
pub fn copula_predictive_draw(b_row: &[f64], fit: &CopulaFit, margin: &MarginModel, rng: &mut Rng) -> (f64, f64) {
    draw_for(b_row, &fit.beta_mean, fit.tau2_mean, margin, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::fit_bounded_kde;
    use approx::assert_relative_eq;

    fn design(rng: &mut Rng, t: usize, p: usize, scale: f64) -> DesignMatrix {
        DesignMatrix::from_matrix(DMatrix::from_fn(t, p, |_, _| scale * stats::std_normal(rng)), false)
    }

    fn test_margin() -> MarginModel {
        let mut rng = substream(500, &[]);
        let s: Vec<f64> = (0..4000)
            .map(|_| (1.0 + 0.6 * stats::std_normal(&mut rng)).exp().min(9.99))
            .collect();
        fit_bounded_kde(&s, 0.0, 10.0, None).unwrap()
    }

    fn ks_uniform(mut u: Vec<f64>) -> f64 {
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        u.iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn psi_scale_values() {
        assert_eq!(psi_scale(&[0.0, 0.0], 3.0).unwrap(), 1.0);
        assert_relative_eq!(psi_scale(&[1.0, 1.0], 2.0).unwrap(), 0.707107, epsilon = 1e-6);
        assert!(matches!(psi_scale(&[1.0], 0.0), Err(Error::Domain(_))));
        let mut rng = substream(1, &[]);
        for _ in 0..200 {
            let b: Vec<f64> = (0..4).map(|_| stats::std_normal(&mut rng)).collect();
            let b2: Vec<f64> = b.iter().map(|v| v * 1.1).collect();
            let tau2 = rng.gen::<f64>() * 5.0 + 0.01;
            let base = psi_scale(&b, tau2).unwrap();
            assert!(base > 0.0 && base <= 1.0);
            assert!(psi_scale(&b2, tau2).unwrap() < base);
            assert!(psi_scale(&b, tau2 * 1.1).unwrap() > base);
        }
    }

    #[test]
    fn loglik_limits_and_additivity() {
        let mut rng = substream(2, &[]);
        let b = design(&mut rng, 20, 3, 1.0);
        let z: Vec<f64> = (0..20).map(|_| stats::std_normal(&mut rng)).collect();
        let std: f64 = z.iter().map(|&v| stats::norm_logpdf(v)).sum();
        assert_relative_eq!(
            conditional_loglik(&b, &z, &[0.0; 3], 1e14).unwrap(),
            std,
            epsilon = 1e-9
        );

        let beta = [0.3, -0.2, 1.0];
        let base = conditional_loglik(&b, &z, &beta, 0.7).unwrap();
        let mut m = b.matrix.clone().insert_row(20, 0.0);
        m.row_mut(20).fill(0.0);
        let mut z2 = z.clone();
        z2.push(0.0);
        let ext = conditional_loglik(&DesignMatrix::from_matrix(m, false), &z2, &beta, 0.7).unwrap();
        assert_relative_eq!(ext - base, stats::norm_logpdf(0.0), epsilon = 1e-12);

        assert!(conditional_loglik(&b, &z[..5], &beta, 1.0).is_err());
        let mut bad = z.clone();
        bad[0] = f64::NAN;
        assert!(matches!(
            conditional_loglik(&b, &bad, &beta, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn correlation_has_unit_diagonal() {
        let mut rng = substream(3, &[]);
        let b = design(&mut rng, 8, 5, 2.0);
        let r = copula_correlation(&b, 0.37).unwrap();
        for i in 0..8 {
            assert!((r[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_t_marginalization_matches_direct_density() {
        for (case, (t, p, tau2)) in [(3usize, 2usize, 1.3), (6, 3, 0.6), (8, 4, 2.0)]
            .into_iter()
            .enumerate()
        {
            let mut rng = substream(4, &[case as u64]);
            let b = design(&mut rng, t, p, 0.8);
            let z: Vec<f64> = (0..t).map(|_| stats::std_normal(&mut rng)).collect();
            // exp(loglik) over beta ~ N(0, I/tau2), relative to the direct density
            let direct = direct_copula_log_density(&b, &z, tau2).unwrap()
                + z.iter().map(|&v| stats::norm_logpdf(v)).sum::<f64>();
            let n = 200_000;
            let vals: Vec<f64> = (0..n)
                .map(|_| {
                    let beta: Vec<f64> = (0..p).map(|_| stats::std_normal(&mut rng) / tau2.sqrt()).collect();
                    (conditional_loglik(&b, &z, &beta, tau2).unwrap() - direct).exp()
                })
                .collect();
            let m = stats::mean(&vals);
            let se = (stats::variance(&vals) / n as f64).sqrt();
            assert!((m - 1.0).abs() < 3.0 * se, "case {case}: ratio {m} se {se}");
        }
    }

    #[test]
    fn copula_density_is_scale_free() {
        // z̃ ~ N(0, σ²(I + BB'/τ²)); standardizing by σ/ψ_t gives the same
        // normal scores, hence the same copula density, for every σ
        let mut rng = substream(5, &[]);
        let b = design(&mut rng, 6, 2, 1.0);
        let tau2: f64 = 0.9;
        let beta: Vec<f64> = (0..2).map(|_| stats::std_normal(&mut rng) / tau2.sqrt()).collect();
        let e: Vec<f64> = (0..6).map(|_| stats::std_normal(&mut rng)).collect();
        let psi: Vec<f64> = (0..6)
            .map(|i| psi_scale(b.matrix.row(i).transpose().as_slice(), tau2).unwrap())
            .collect();
        let mut dens = Vec::new();
        for sigma in [0.1, 1.0, 37.0] {
            let z: Vec<f64> = (0..6)
                .map(|i| {
                    let lin: f64 = (0..2).map(|j| b.matrix[(i, j)] * beta[j]).sum();
                    let zt = sigma * (lin + e[i]);
                    psi[i] * zt / sigma
                })
                .collect();
            dens.push(direct_copula_log_density(&b, &z, tau2).unwrap());
        }
        assert_relative_eq!(dens[0], dens[1], max_relative = 1e-12);
        assert_relative_eq!(dens[1], dens[2], max_relative = 1e-12);
    }

    #[test]
    fn mcmc_recovers_generating_parameters() {
        let (t, p, tau2_star) = (2000, 40, 1.0_f64);
        let mut rng = substream(6, &[]);
        let b = design(&mut rng, t, p, 0.25);
        let beta_star: Vec<f64> = (0..p)
            .map(|_| stats::std_normal(&mut rng) / f64::sqrt(tau2_star))
            .collect();
        let z: Vec<f64> = (0..t)
            .map(|i| {
                let row: Vec<f64> = b.matrix.row(i).iter().copied().collect();
                let psi = psi_scale(&row, tau2_star).unwrap();
                let lin: f64 = row.iter().zip(&beta_star).map(|(a, c)| a * c).sum();
                psi * lin + psi * stats::std_normal(&mut rng)
            })
            .collect();
        let fit = mcmc_copula(&b, &z, &WeibullTau2Prior::default(), 4000, 1000, 3).unwrap();
        let sd_tau = stats::variance(&fit.draws.tau2).sqrt();
        assert!(
            (fit.tau2_mean - tau2_star).abs() < 3.0 * sd_tau,
            "tau2 {} sd {}",
            fit.tau2_mean,
            sd_tau
        );
        let covered = (0..p)
            .filter(|&j| {
                let col: Vec<f64> = fit.draws.beta.column(j).iter().copied().collect();
                (stats::mean(&col) - beta_star[j]).abs() < 3.0 * stats::variance(&col).sqrt()
            })
            .count();
        assert!(covered as f64 >= 0.95 * p as f64, "{covered}/{p}");
        assert!((0.2..0.7).contains(&fit.acceptance), "acceptance {}", fit.acceptance);
        assert!(fit.warnings.is_empty());
    }

    #[test]
    fn zero_design_returns_prior_for_beta() {
        // shape > 1 keeps E[1/τ²] finite so the comparison is stable
        let p = 4;
        let b = DesignMatrix::from_matrix(DMatrix::zeros(50, p), false);
        let z = vec![0.3; 50];
        let prior = WeibullTau2Prior { shape: 2.0, scale: 2.5 };
        let fit = mcmc_copula(&b, &z, &prior, 40_000, 2000, 8).unwrap();
        let inv_tau: Vec<f64> = fit.draws.tau2.iter().map(|v| 1.0 / v).collect();
        let target = stats::mean(&inv_tau);
        let n = fit.draws.tau2.len() as f64;
        for j in 0..p {
            let sq: Vec<f64> = fit.draws.beta.column(j).iter().map(|v| v * v).collect();
            let se = stats::variance(&sq).sqrt() / stats::effective_sample_size(&sq).sqrt();
            assert!((stats::mean(&sq) - target).abs() < 4.0 * se, "coord {j}");
            for k in (j + 1)..p {
                let cross: Vec<f64> = (0..n as usize)
                    .map(|i| fit.draws.beta[(i, j)] * fit.draws.beta[(i, k)])
                    .collect();
                let se = stats::variance(&cross).sqrt() / stats::effective_sample_size(&cross).sqrt();
                assert!(stats::mean(&cross).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn input_validation() {
        let b = DesignMatrix::from_matrix(DMatrix::zeros(5, 2), false);
        assert!(mcmc_copula(&b, &[0.0; 4], &WeibullTau2Prior::default(), 10, 2, 0).is_err());
        let bad = WeibullTau2Prior {
            shape: -1.0,
            scale: 1.0,
        };
        assert!(matches!(
            mcmc_copula(&b, &[0.0; 5], &bad, 10, 2, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(mcmc_copula(&b, &[0.0; 5], &WeibullTau2Prior::default(), 10, 10, 0).is_err());
    }

    #[test]
    fn null_row_reduces_to_margin() {
        let margin = test_margin();
        let fit = CopulaFit::from_params(vec![0.7, -1.3, 2.0], 0.8, "m");
        for k in 0..200 {
            let y = 0.01 + 9.98 * k as f64 / 199.0;
            let got = copula_predictive_density(y, &[0.0; 3], &fit, &margin);
            assert_relative_eq!(got, margin.pdf(y), max_relative = 1e-12);
        }
        assert_eq!(copula_predictive_density(-0.1, &[0.0; 3], &fit, &margin), 0.0);
        assert_eq!(copula_predictive_density(10.5, &[0.0; 3], &fit, &margin), 0.0);
    }

    fn density_on_grid(b_row: &[f64], fit: &CopulaFit, margin: &MarginModel, n: usize) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = (margin.lower_y, margin.upper_y);
        let ys: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let cdf = ys
            .iter()
            .scan((0.0, None::<(f64, f64)>), |(acc, prev), &y| {
                let d = copula_predictive_density(y, b_row, fit, margin);
                if let Some((py, pd)) = *prev {
                    *acc += 0.5 * (pd + d) * (y - py);
                }
                *prev = Some((y, d));
                Some(*acc)
            })
            .collect();
        (ys, cdf)
    }

    #[test]
    fn predictive_density_integrates_to_one() {
        let margin = test_margin();
        let mut rng = substream(9, &[]);
        for _ in 0..5 {
            let b_row: Vec<f64> = (0..3).map(|_| 0.5 * stats::std_normal(&mut rng)).collect();
            let beta: Vec<f64> = (0..3).map(|_| stats::std_normal(&mut rng)).collect();
            let tau2 = 0.5 + rng.gen::<f64>() * 2.0;
            let fit = CopulaFit::from_params(beta, tau2, "m");
            let (_, cdf) = density_on_grid(&b_row, &fit, &margin, 200_000);
            assert!((cdf.last().unwrap() - 1.0).abs() < 1e-3, "{}", cdf.last().unwrap());
        }
    }

    #[test]
    fn draws_match_density() {
        let margin = test_margin();
        let b_row = [0.6, -0.4, 0.3];
        let fit = CopulaFit::from_params(vec![1.0, 0.5, -0.8], 1.1, "m");
        let (ys, cdf) = density_on_grid(&b_row, &fit, &margin, 100_000);
        let total = *cdf.last().unwrap();
        let mut rng = substream(10, &[]);
        let pit: Vec<f64> = (0..100_000)
            .map(|_| {
                let (y, _) = copula_predictive_draw(&b_row, &fit, &margin, &mut rng);
                assert!(y >= margin.lower_y && y <= margin.upper_y);
                let i = ys.partition_point(|&g| g <= y).clamp(1, ys.len() - 1);
                let w = (y - ys[i - 1]) / (ys[i] - ys[i - 1]);
                (cdf[i - 1] + w * (cdf[i] - cdf[i - 1])) / total
            })
            .collect();
        assert!(ks_uniform(pit) < 0.02);
    }

    #[test]
    fn prior_beta_recovers_margin() {
        // z = ψ(b'β + e) with β from its prior has unit variance for any b_row,
        // so draws map back to the fitted margin
        let margin = test_margin();
        let tau2: f64 = 0.5;
        let b_row = [1.0, 2.0, -0.5];
        let mut rng = substream(11, &[]);
        let pit: Vec<f64> = (0..100_000)
            .map(|_| {
                let beta: Vec<f64> = (0..3).map(|_| stats::std_normal(&mut rng) / tau2.sqrt()).collect();
                let fit = CopulaFit::from_params(beta, tau2, "m");
                margin.cdf(copula_predictive_draw(&b_row, &fit, &margin, &mut rng).0)
            })
            .collect();
        assert!(ks_uniform(pit) < 0.02);
        // with a null feature row the margin is recovered for any fixed β
        let fit = CopulaFit::from_params(vec![3.0, -1.0, 0.2], tau2, "m");
        let pit: Vec<f64> = (0..100_000)
            .map(|_| margin.cdf(copula_predictive_draw(&[0.0; 3], &fit, &margin, &mut rng).0))
            .collect();
        assert!(ks_uniform(pit) < 0.02);
    }

    #[test]
    fn vanishing_psi_collapses_draws() {
        let margin = test_margin();
        let fit = CopulaFit::from_params(vec![1e-4, 0.0], 1.0, "m");
        let b_row = [1e4, 0.0];
        let (psi, mu) = predictive_location(&b_row, &fit);
        assert!(psi < 1e-3);
        let target = margin.from_normal_score(mu);
        let mut rng = substream(12, &[]);
        for _ in 0..1000 {
            let (y, _) = copula_predictive_draw(&b_row, &fit, &margin, &mut rng);
            assert!((y - target).abs() < 0.02);
        }
    }
}
