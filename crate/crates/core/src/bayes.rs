//! Gibbs samplers for the output layer: Gaussian errors with a ridge prior,
//! and skew-t errors through the usual conditionally Gaussian augmentation.
//!
//! Throughout, `tau2` is the prior *precision* of the coefficients,
//! `beta | tau2 ~ N(0, I / tau2)`, with an inverse-gamma hyperprior. Its full
//! conditional is therefore generalized inverse Gaussian.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::DesignMatrix;
use crate::rng::{substream, Rng};
use crate::stats;

pub const DEFAULT_N_ITER: usize = 10_000;
pub const DEFAULT_N_BURN: usize = 2_000;

/// Conjugate priors for the Gaussian output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianRidgePrior {
    /// IG shape for `sigma2`.
    pub a: f64,
    /// IG scale for `sigma2`.
    pub b: f64,
    /// IG shape for `tau2`.
    pub a_tilde: f64,
    /// IG scale for `tau2`.
    pub b_tilde: f64,
    /// Use separate `tau2` for the linear and the quadratic block.
    pub split_quadratic: bool,
}

impl Default for GaussianRidgePrior {
    fn default() -> Self {
        Self {
            a: 0.001,
            b: 0.001,
            a_tilde: 0.001,
            b_tilde: 0.001,
            split_quadratic: false,
        }
    }
}

impl GaussianRidgePrior {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("a_tilde", self.a_tilde),
            ("b_tilde", self.b_tilde),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Hyperpriors for the skew-t output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkewTPrior {
    /// Prior variance of `psi`.
    pub d0: f64,
    /// IG shape for `sigma2`.
    pub c0: f64,
    /// IG scale for `sigma2`; half the response variance when unset.
    pub c0_scale: Option<f64>,
    /// IG shape for `tau2`.
    pub b0: f64,
    /// IG scale for `tau2`.
    pub b0_scale: f64,
    /// Fixed degrees of freedom.
    pub nu: f64,
    pub split_quadratic: bool,
}

impl Default for SkewTPrior {
    fn default() -> Self {
        Self {
            d0: 1.0,
            c0: 2.5,
            c0_scale: None,
            b0: 1.0,
            b0_scale: 0.005,
            nu: 7.0,
            split_quadratic: false,
        }
    }
}

impl SkewTPrior {
    pub fn validate(&self) -> Result<()> {
        let c0s = self.c0_scale.unwrap_or(1.0);
        for (name, v) in [
            ("d0", self.d0),
            ("c0", self.c0),
            ("c0_scale", c0s),
            ("b0", self.b0),
            ("b0_scale", self.b0_scale),
            ("nu", self.nu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ess: BTreeMap<String, f64>,
    pub acceptance: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Posterior means of the augmentation latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSummary {
    pub zeta_mean: Vec<f64>,
    pub w_mean: Vec<f64>,
}

/// Retained draws (after burn-in).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// `n_draw × p`.
    pub beta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Precision of the quadratic block when it has its own `tau2`.
    pub tau2_quadratic: Option<Vec<f64>>,
    pub psi: Option<Vec<f64>>,
    pub latent: Option<LatentSummary>,
    pub diagnostics: Diagnostics,
}

impl PosteriorDraws {
    pub fn n_draw(&self) -> usize {
        self.beta.nrows()
    }

    /// Columnar dump: one row per retained draw.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["draw".to_string(), "sigma2".into(), "tau2".into()];
        if self.tau2_quadratic.is_some() {
            header.push("tau2_quadratic".into());
        }
        if self.psi.is_some() {
            header.push("psi".into());
        }
        header.extend((0..self.beta.ncols()).map(|j| format!("beta_{j}")));
        wr.write_record(&header)?;
        for i in 0..self.n_draw() {
            let mut rec = vec![i.to_string(), self.sigma2[i].to_string(), self.tau2[i].to_string()];
            if let Some(q) = &self.tau2_quadratic {
                rec.push(q[i].to_string());
            }
            if let Some(p) = &self.psi {
                rec.push(p[i].to_string());
            }
            rec.extend(self.beta.row(i).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Plug-in parameters used for forecasting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2_quadratic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

pub fn posterior_mean(d: &PosteriorDraws) -> Result<PointEstimate> {
    let n = d.n_draw();
    if n == 0 || d.sigma2.is_empty() {
        return Err(Error::InvalidInput("posterior has no draws".into()));
    }
    let beta = (0..d.beta.ncols()).map(|j| d.beta.column(j).mean()).collect();
    Ok(PointEstimate {
        beta,
        sigma2: stats::mean(&d.sigma2),
        tau2: stats::mean(&d.tau2),
        tau2_quadratic: d.tau2_quadratic.as_deref().map(stats::mean),
        psi: d.psi.as_deref().map(stats::mean),
    })
}

/// Skew-t `(omega2, alpha)` to the augmentation's `(psi, sigma2)`.
pub fn skew_t_to_latent(omega2: f64, alpha: f64) -> (f64, f64) {
    let omega = omega2.sqrt();
    let r = (1.0 + alpha * alpha).sqrt();
    (omega * alpha / r, omega2 / (1.0 + alpha * alpha))
}

/// Inverse of [`skew_t_to_latent`].
pub fn latent_to_skew_t(psi: f64, sigma2: f64) -> (f64, f64) {
    (sigma2 + psi * psi, psi / sigma2.sqrt())
}

/// Azzalini–Capitanio skew-t density with location zero.
pub fn marginal_error_density_skew_t(e: f64, omega2: f64, alpha: f64, nu: f64) -> f64 {
    let omega = omega2.sqrt();
    let x = e / omega;
    let arg = alpha * x * ((nu + 1.0) / (nu + x * x)).sqrt();
    2.0 / omega * stats::student_t_pdf(x, nu) * stats::student_t_cdf(arg, nu + 1.0)
}

/// One draw of the skew-t error from the latent representation.
pub fn draw_skew_t_error<R: rand::Rng + ?Sized>(rng: &mut R, psi: f64, sigma2: f64, nu: f64) -> f64 {
    let w = stats::gamma_rate(rng, nu / 2.0, nu / 2.0);
    let zeta = stats::std_normal(rng).abs() / w.sqrt();
    psi * zeta + (sigma2 / w).sqrt() * stats::std_normal(rng)
}

fn check_inputs(b: &DesignMatrix, y: &[f64], n_iter: usize, n_burn: usize) -> Result<()> {
    if b.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            got: y.len(),
            context: "response length vs design rows",
        });
    }
    if b.ncols() == 0 || y.is_empty() {
        return Err(Error::InvalidDimension("empty design".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response contains non-finite values".into()));
    }
    if b.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design contains non-finite values".into()));
    }
    if n_burn >= n_iter {
        return Err(Error::InvalidConfig(format!(
            "n_burn ({n_burn}) must be below n_iter ({n_iter})"
        )));
    }
    Ok(())
}

fn short_sample_warning(t: usize, p: usize) -> Option<String> {
    (4 * t < p).then(|| {
        let msg = format!("only {t} observations for {p} coefficients");
        log::warn!("{msg}");
        msg
    })
}

/// Coefficient-to-block labels: 0 for the linear block (and intercept),
/// 1 for the quadratic block.
fn penalty_blocks(b: &DesignMatrix, split: bool) -> Vec<usize> {
    let p = b.ncols();
    if !split {
        return vec![0; p];
    }
    let off = usize::from(b.has_intercept);
    let n_h = (p - off) / 2;
    (0..p).map(|j| usize::from(j >= off + n_h)).collect()
}

fn draw_block_precisions(rng: &mut Rng, beta: &[f64], blocks: &[usize], shape: f64, scale: f64, current: &mut [f64]) {
    for (k, cur) in current.iter_mut().enumerate() {
        let (mut n, mut ss) = (0usize, 0.0);
        for (j, &bk) in blocks.iter().enumerate() {
            if bk == k {
                n += 1;
                ss += beta[j] * beta[j];
            }
        }
        let lambda = n as f64 / 2.0 - shape;
        *cur = stats::gig(rng, lambda, 2.0 * scale, ss, *cur).max(f64::MIN_POSITIVE);
    }
}

/// `N(P⁻¹ r, P⁻¹)` via a Cholesky factor of the precision `P`.
fn draw_from_precision(rng: &mut Rng, precision: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| stats::std_normal(rng));
    let dev = chol
        .l()
        .ad_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(mean + dev)
}

struct ChainSummary {
    ess: BTreeMap<String, f64>,
}

fn summarize(beta: &DMatrix<f64>, scalars: &[(&str, &[f64])]) -> ChainSummary {
    let mut ess = BTreeMap::new();
    for (name, chain) in scalars {
        ess.insert(name.to_string(), stats::effective_sample_size(chain));
    }
    let mut min_beta = f64::INFINITY;
    let mut col = Vec::with_capacity(beta.nrows());
    for j in 0..beta.ncols() {
        col.clear();
        col.extend(beta.column(j).iter());
        min_beta = min_beta.min(stats::effective_sample_size(&col));
    }
    if min_beta.is_finite() {
        ess.insert("beta_min".into(), min_beta);
    }
    ChainSummary { ess }
}

/// Gibbs sampler for `y = Bβ + ε`, `ε ~ N(0, σ²)` with the ridge prior.
///
/// With a shared `tau2`, `B'B` is eigendecomposed once so every sweep costs
/// O(p²); with split blocks the posterior precision is factorized each sweep.
pub fn gibbs_gaussian(
    b: &DesignMatrix,
    y: &[f64],
    prior: &GaussianRidgePrior,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    check_inputs(b, y, n_iter, n_burn)?;
    let t = y.len();
    let p = b.ncols();
    let mut rng = substream(seed, &[]);
    let mut warnings: Vec<String> = short_sample_warning(t, p).into_iter().collect();

    let x = &b.matrix;
    let yv = DVector::from_column_slice(y);
    let btb = x.tr_mul(x);
    let bty = x.tr_mul(&yv);
    let yty = yv.dot(&yv);
    let blocks = penalty_blocks(b, prior.split_quadratic);
    let n_blocks = if prior.split_quadratic { 2 } else { 1 };

    let eigen = if n_blocks == 1 {
        let eig = SymmetricEigen::new(btb.clone());
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("eigendecomposition of B'B failed".into()));
        }
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let qty = eig.eigenvectors.tr_mul(&bty);
        Some((eig.eigenvectors, lam, qty))
    } else {
        None
    };

    let n_draw = n_iter - n_burn;
    let mut beta_draws = DMatrix::zeros(n_draw, p);
    let mut sigma2_draws = Vec::with_capacity(n_draw);
    let mut tau2_draws = Vec::with_capacity(n_draw);
    let mut tau2q_draws = Vec::with_capacity(if n_blocks == 2 { n_draw } else { 0 });

    let mut sigma2 = (yty / t as f64).max(1e-8);
    let mut tau2 = vec![1.0; n_blocks];
    let mut beta: DVector<f64>;
    let mut gamma = vec![0.0; p];

    for iter in 0..n_iter {
        // beta | sigma2, tau2, y
        let rss_fast = if let Some((q, lam, qty)) = &eigen {
            for i in 0..p {
                let d = lam[i] / sigma2 + tau2[0];
                gamma[i] = qty[i] / (sigma2 * d) + stats::std_normal(&mut rng) / d.sqrt();
            }
            beta = q * DVector::from_column_slice(&gamma);
            let mut rss = yty;
            for i in 0..p {
                rss += gamma[i] * (lam[i] * gamma[i] - 2.0 * qty[i]);
            }
            Some(rss)
        } else {
            let mut prec = &btb / sigma2;
            for j in 0..p {
                prec[(j, j)] += tau2[blocks[j]];
            }
            beta = draw_from_precision(&mut rng, prec, &(&bty / sigma2))?;
            None
        };
        // the expanded form loses precision when the fit is nearly exact
        let rss = match rss_fast {
            Some(r) if r.is_finite() && r > 1e-8 * yty => r,
            _ => (&yv - x * &beta).norm_squared(),
        }
        .max(0.0);

        sigma2 = stats::inv_gamma(&mut rng, prior.a + t as f64 / 2.0, prior.b + rss / 2.0).max(f64::MIN_POSITIVE);
        draw_block_precisions(
            &mut rng,
            beta.as_slice(),
            &blocks,
            prior.a_tilde,
            prior.b_tilde,
            &mut tau2,
        );

        if iter >= n_burn {
            let i = iter - n_burn;
            beta_draws.row_mut(i).copy_from(&beta.transpose());
            sigma2_draws.push(sigma2);
            tau2_draws.push(tau2[0]);
            if n_blocks == 2 {
                tau2q_draws.push(tau2[1]);
            }
        }
    }

    let mut scalars: Vec<(&str, &[f64])> = vec![("sigma2", &sigma2_draws), ("tau2", &tau2_draws)];
    if n_blocks == 2 {
        scalars.push(("tau2_quadratic", &tau2q_draws));
    }
    let summary = summarize(&beta_draws, &scalars);
    if n_draw < 100 {
        warnings.push(format!("only {n_draw} retained draws"));
    }
    Ok(PosteriorDraws {
        beta: beta_draws,
        sigma2: sigma2_draws,
        tau2: tau2_draws,
        tau2_quadratic: (n_blocks == 2).then_some(tau2q_draws),
        psi: None,
        latent: None,
        diagnostics: Diagnostics {
            ess: summary.ess,
            acceptance: BTreeMap::new(),
            warnings,
        },
    })
}

/// Gibbs sampler for skew-t output-layer errors with fixed `nu`.
///
/// `ε_t = ψζ_t + ε̃_t`, `ε̃_t | w_t ~ N(0, σ²/w_t)`, `ζ_t | w_t ~ TN₊(0, 1/w_t)`,
/// `w_t ~ G(ν/2, ν/2)`; `(β, ψ)` are drawn jointly given the latents.
pub fn gibbs_skew_t(
    b: &DesignMatrix,
    y: &[f64],
    prior: &SkewTPrior,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    check_inputs(b, y, n_iter, n_burn)?;
    let t = y.len();
    let p = b.ncols();
    let nu = prior.nu;
    let mut rng = substream(seed, &[]);
    let mut warnings: Vec<String> = short_sample_warning(t, p).into_iter().collect();

    let s_y2 = if t > 1 { stats::variance(y) } else { 1.0 };
    let c0_scale = match prior.c0_scale {
        Some(c) => c,
        None if s_y2 > 0.0 => 0.5 * s_y2,
        None => return Err(Error::DegenerateSample("response has zero variance".into())),
    };

    let x = &b.matrix;
    let blocks = penalty_blocks(b, prior.split_quadratic);
    let n_blocks = if prior.split_quadratic { 2 } else { 1 };

    let n_draw = n_iter - n_burn;
    let mut beta_draws = DMatrix::zeros(n_draw, p);
    let mut sigma2_draws = Vec::with_capacity(n_draw);
    let mut tau2_draws = Vec::with_capacity(n_draw);
    let mut tau2q_draws = Vec::new();
    let mut psi_draws = Vec::with_capacity(n_draw);
    let mut zeta_sum = vec![0.0; t];
    let mut w_sum = vec![0.0; t];

    let mut beta = DVector::<f64>::zeros(p);
    let mut psi = 0.0;
    let mut sigma2 = s_y2.max(1e-8);
    let mut tau2 = vec![1.0; n_blocks];
    let mut w = vec![1.0; t];
    let mut zeta = vec![(2.0 / std::f64::consts::PI).sqrt(); t];
    let mut fitted;
    let mut xw = DMatrix::<f64>::zeros(t, p + 1);

    for iter in 0..n_iter {
        fitted = x * &beta;
        // zeta, then w, given the current regression residual
        let denom = sigma2 + psi * psi;
        for i in 0..t {
            let e = y[i] - fitted[i];
            let sd = (sigma2 / (denom * w[i])).sqrt();
            zeta[i] = stats::truncated_normal_positive(&mut rng, psi * e / denom, sd);
            let r = e - psi * zeta[i];
            let rate = 0.5 * (nu + zeta[i] * zeta[i] + r * r / sigma2);
            w[i] = stats::gamma_rate(&mut rng, (nu + 2.0) / 2.0, rate).max(f64::MIN_POSITIVE);
        }

        // (beta, psi) jointly: weighted regression of y on [B, zeta]
        let mut rhs = DVector::zeros(p + 1);
        for i in 0..t {
            let sw = w[i].sqrt();
            for j in 0..p {
                xw[(i, j)] = sw * x[(i, j)];
            }
            xw[(i, p)] = sw * zeta[i];
            let wy = w[i] * y[i];
            for j in 0..p {
                rhs[j] += x[(i, j)] * wy;
            }
            rhs[p] += zeta[i] * wy;
        }
        let mut prec = xw.tr_mul(&xw) / sigma2;
        rhs /= sigma2;
        for j in 0..p {
            prec[(j, j)] += tau2[blocks[j]];
        }
        prec[(p, p)] += 1.0 / prior.d0;
        let coef = draw_from_precision(&mut rng, prec, &rhs)?;
        beta.copy_from(&coef.rows(0, p));
        psi = coef[p];

        fitted = x * &beta;
        let mut wss = 0.0;
        for i in 0..t {
            let r = y[i] - fitted[i] - psi * zeta[i];
            wss += w[i] * r * r;
        }
        sigma2 = stats::inv_gamma(&mut rng, prior.c0 + t as f64 / 2.0, c0_scale + 0.5 * wss).max(f64::MIN_POSITIVE);
        draw_block_precisions(&mut rng, beta.as_slice(), &blocks, prior.b0, prior.b0_scale, &mut tau2);

        if iter >= n_burn {
            let k = iter - n_burn;
            beta_draws.row_mut(k).copy_from(&beta.transpose());
            sigma2_draws.push(sigma2);
            tau2_draws.push(tau2[0]);
            if n_blocks == 2 {
                tau2q_draws.push(tau2[1]);
            }
            psi_draws.push(psi);
            for i in 0..t {
                zeta_sum[i] += zeta[i];
                w_sum[i] += w[i];
            }
        }
    }

    let mut scalars: Vec<(&str, &[f64])> = vec![("sigma2", &sigma2_draws), ("tau2", &tau2_draws), ("psi", &psi_draws)];
    if n_blocks == 2 {
        scalars.push(("tau2_quadratic", &tau2q_draws));
    }
    let summary = summarize(&beta_draws, &scalars);
    if n_draw < 100 {
        warnings.push(format!("only {n_draw} retained draws"));
    }
    let nd = n_draw as f64;
    Ok(PosteriorDraws {
        beta: beta_draws,
        sigma2: sigma2_draws,
        tau2: tau2_draws,
        tau2_quadratic: (n_blocks == 2).then_some(tau2q_draws),
        psi: Some(psi_draws),
        latent: Some(LatentSummary {
            zeta_mean: zeta_sum.into_iter().map(|v| v / nd).collect(),
            w_mean: w_sum.into_iter().map(|v| v / nd).collect(),
        }),
        diagnostics: Diagnostics {
            ess: summary.ess,
            acceptance: BTreeMap::new(),
            warnings,
        },
    })
}
