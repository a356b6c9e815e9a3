//! Price transform and the time-invariant margin `F_Y` used by the copula
//! model: a boundary-reflected Gaussian KDE tabulated on a uniform grid.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Grid size used when none is given.
pub const DEFAULT_GRID: usize = 2048;
/// CDF clamp applied before `Φ⁻¹`.
pub const CDF_EPS: f64 = 1e-7;
/// Smallest sample accepted by [`fit_bounded_kde`].
pub const MIN_SAMPLES: usize = 30;

/// How the upper `Y` bound is derived from a price cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpperBoundConvention {
    /// `log(cap + shift)`, consistent with the transform itself.
    #[default]
    CapPlusShift,
    /// `log(cap)`.
    CapOnly,
}

/// `Y = log(price + shift)` with the admissible price range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceTransform {
    pub shift: f64,
    pub lower_price: f64,
    pub upper_price: f64,
    pub upper_convention: UpperBoundConvention,
}

impl Default for PriceTransform {
    fn default() -> Self {
        Self {
            shift: 1001.0,
            lower_price: -1000.0,
            upper_price: 14_500.0,
            upper_convention: UpperBoundConvention::CapPlusShift,
        }
    }
}

impl PriceTransform {
    pub fn with_cap(&self, cap: f64) -> Self {
        Self {
            upper_price: cap,
            ..self.clone()
        }
    }

    pub fn lower_y(&self) -> f64 {
        (self.lower_price + self.shift).ln()
    }

    pub fn upper_y(&self) -> f64 {
        match self.upper_convention {
            UpperBoundConvention::CapPlusShift => (self.upper_price + self.shift).ln(),
            UpperBoundConvention::CapOnly => self.upper_price.ln(),
        }
    }
}

/// Maps a price to the `Y` scale.
pub fn transform_price(price: f64, t: &PriceTransform) -> Result<f64> {
    if !price.is_finite() || price + t.shift <= 0.0 {
        return Err(Error::Domain(format!(
            "price {price} is not admissible for log(price + {})",
            t.shift
        )));
    }
    if price < t.lower_price {
        return Err(Error::Domain(format!(
            "price {price} is below the floor {}",
            t.lower_price
        )));
    }
    Ok((price + t.shift).ln())
}

/// Maps a `Y` value back to a price.
pub fn inverse_transform(y: f64, t: &PriceTransform) -> f64 {
    y.exp() - t.shift
}

/// Tabulated density and distribution function on `[lower_y, upper_y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginModel {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub bandwidth: f64,
    pub lower_y: f64,
    pub upper_y: f64,
}

fn silverman(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let sd = stats::variance(samples).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Boundary-reflected Gaussian KDE on a 2048-point grid.
///
/// Samples are linearly binned onto the grid and convolved with a kernel
/// folded over all mirror images about both bounds, so no mass leaks
/// outside `[lower_y, upper_y]`.
pub fn fit_bounded_kde(samples: &[f64], lower_y: f64, upper_y: f64, bandwidth: Option<f64>) -> Result<MarginModel> {
    fit_bounded_kde_on_grid(samples, lower_y, upper_y, bandwidth, DEFAULT_GRID)
}

pub fn fit_bounded_kde_on_grid(
    samples: &[f64],
    lower_y: f64,
    upper_y: f64,
    bandwidth: Option<f64>,
    grid_size: usize,
) -> Result<MarginModel> {
    if !(lower_y < upper_y) || !lower_y.is_finite() || !upper_y.is_finite() {
        return Err(Error::InvalidInput(format!("invalid bounds [{lower_y}, {upper_y}]")));
    }
    if grid_size < 3 {
        return Err(Error::InvalidDimension("margin grid needs at least 3 points".into()));
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "bounded KDE needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let offenders: Vec<(usize, f64)> = samples
        .iter()
        .enumerate()
        .filter(|(_, &s)| !(s >= lower_y && s <= upper_y))
        .map(|(i, &s)| (i, s))
        .take(20)
        .collect();
    if !offenders.is_empty() {
        return Err(Error::OutOfBounds {
            lower: lower_y,
            upper: upper_y,
            offenders,
        });
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return Err(Error::DegenerateSample(format!(
            "all {} samples equal {}",
            samples.len(),
            samples[0]
        )));
    }
    let h = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::InvalidInput(format!("bandwidth must be positive, got {b}"))),
        None => silverman(samples),
    };
    if !(h > 0.0) {
        return Err(Error::DegenerateSample("zero spread in samples".into()));
    }

    let n = grid_size;
    let dx = (upper_y - lower_y) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lower_y + i as f64 * dx).collect();

    let mut counts = vec![0.0; n];
    for &s in samples {
        let pos = ((s - lower_y) / dx).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        counts[i] += 1.0 - frac;
        counts[i + 1] += frac;
    }

    // Kernel folded with period 2(n-1) in index space: images about the
    // lower bound sit at index -j, images about the upper bound at 2(n-1)-j.
    let period = 2 * (n - 1);
    let mut folded = vec![0.0; period];
    let reach = ((9.0 * h / dx).ceil() as usize).max(1);
    let cutoff = reach.min(50 * period);
    for d in 0..=cutoff {
        let w = stats::norm_pdf(d as f64 * dx / h);
        folded[d % period] += w;
        if d > 0 {
            folded[(period - d % period) % period] += w;
        }
    }

    let mut pdf = vec![0.0; n];
    for (i, p) in pdf.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let direct = folded[(i + period - j) % period];
            let mirrored = folded[(i + j) % period];
            acc += c * (direct + mirrored);
        }
        *p = acc;
    }
    MarginModel::from_density(grid, pdf, h)
}

impl MarginModel {
    /// Normalizes a nonnegative density tabulated on `grid` and builds the CDF.
    pub fn from_density(grid: Vec<f64>, mut pdf: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if grid.len() != pdf.len() || grid.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: pdf.len(),
                context: "margin grid vs pdf",
            });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("margin grid must be strictly increasing".into()));
        }
        if pdf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mut cdf = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (pdf[i] + pdf[i - 1]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[grid.len() - 1];
        if !(total > 0.0) {
            return Err(Error::DegenerateSample("density has zero mass".into()));
        }
        pdf.iter_mut().for_each(|p| *p /= total);
        cdf.iter_mut().for_each(|c| *c /= total);
        let last = cdf.len() - 1;
        cdf[last] = 1.0;
        let lower_y = grid[0];
        let upper_y = grid[last];
        Ok(Self {
            grid,
            pdf,
            cdf,
            bandwidth,
            lower_y,
            upper_y,
        })
    }

    /// Index `i` with `grid[i] <= y < grid[i+1]`, for `y` strictly inside.
    fn cell(&self, y: f64) -> usize {
        let i = self.grid.partition_point(|&g| g <= y);
        i.saturating_sub(1).min(self.grid.len() - 2)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if !(y >= self.lower_y && y <= self.upper_y) {
            return 0.0;
        }
        let i = self.cell(y);
        let w = (y - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.pdf[i] + w * (self.pdf[i + 1] - self.pdf[i])
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.lower_y {
            return 0.0;
        }
        if y >= self.upper_y {
            return 1.0;
        }
        let i = self.cell(y);
        let w = (y - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        (self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])).clamp(0.0, 1.0)
    }

    /// Exact inverse of the piecewise-linear CDF.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} is outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        // first grid index whose cdf reaches u
        let j = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let (g0, g1) = (self.grid[j - 1], self.grid[j]);
        if c1 > c0 {
            g0 + (u - c0) / (c1 - c0) * (g1 - g0)
        } else {
            g1
        }
    }

    /// `Φ⁻¹(F_Y(y))` with the CDF clamped to `[ε, 1-ε]`.
    pub fn normal_score(&self, y: f64) -> f64 {
        stats::norm_quantile(self.cdf(y).clamp(CDF_EPS, 1.0 - CDF_EPS))
    }

    /// Inverse of [`MarginModel::normal_score`]: `F_Y⁻¹(Φ(z))`.
    pub fn from_normal_score(&self, z: f64) -> f64 {
        self.quantile_unchecked(stats::norm_cdf(z).clamp(CDF_EPS, 1.0 - CDF_EPS))
    }

    /// Writes the model as a commented header followed by `grid,pdf,cdf` rows.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# lower_y={}", self.lower_y)?;
        writeln!(w, "# upper_y={}", self.upper_y)?;
        writeln!(w, "# bandwidth={}", self.bandwidth)?;
        writeln!(w, "grid,pdf,cdf")?;
        for i in 0..self.grid.len() {
            writeln!(w, "{},{},{}", self.grid[i], self.pdf[i], self.cdf[i])?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut bandwidth = f64::NAN;
        let mut lower = f64::NAN;
        let mut upper = f64::NAN;
        let (mut grid, mut pdf, mut cdf) = (Vec::new(), Vec::new(), Vec::new());
        let parse = |s: &str, row: usize| {
            s.trim().parse::<f64>().map_err(|e| Error::Load {
                row,
                message: format!("bad number {s:?}: {e}"),
            })
        };
        for (row, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let v = parse(v, row + 1)?;
                    match k.trim() {
                        "bandwidth" => bandwidth = v,
                        "lower_y" => lower = v,
                        "upper_y" => upper = v,
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line.starts_with("grid") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Load {
                    row: row + 1,
                    message: format!("expected 3 columns, got {}", cols.len()),
                });
            }
            grid.push(parse(cols[0], row + 1)?);
            pdf.push(parse(cols[1], row + 1)?);
            cdf.push(parse(cols[2], row + 1)?);
        }
        if grid.len() < 2 {
            return Err(Error::Load {
                row: 0,
                message: "margin file has fewer than two grid rows".into(),
            });
        }
        let lower_y = if lower.is_nan() { grid[0] } else { lower };
        let upper_y = if upper.is_nan() { grid[grid.len() - 1] } else { upper };
        Ok(Self {
            grid,
            pdf,
            cdf,
            bandwidth,
            lower_y,
            upper_y,
        })
    }
}

/// `F_Y` at `y`.
pub fn margin_cdf(m: &MarginModel, y: f64) -> f64 {
    m.cdf(y)
}

/// `F_Y⁻¹(u)`.
pub fn margin_quantile(m: &MarginModel, u: f64) -> Result<f64> {
    m.quantile(u)
}

/// Normal scores `Φ⁻¹(F_Y(y_t))` with tail clamping.
pub fn to_normal_scores(m: &MarginModel, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| m.normal_score(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn trapz(m: &MarginModel) -> f64 {
        m.grid
            .windows(2)
            .zip(m.pdf.windows(2))
            .map(|(g, p)| 0.5 * (p[0] + p[1]) * (g[1] - g[0]))
            .sum()
    }

    #[test]
    fn price_transform_values() {
        let t = PriceTransform::default();
        assert_eq!(transform_price(-1000.0, &t).unwrap(), 0.0);
        assert_relative_eq!(transform_price(0.0, &t).unwrap(), 6.908755, epsilon = 1e-6);
        assert_eq!(inverse_transform(0.0, &t), -1000.0);
        for p in [-999.5, -3.0, 0.0, 87.25, 14_500.0] {
            let y = transform_price(p, &t).unwrap();
            assert!((inverse_transform(y, &t) - p).abs() < 1e-12 * p.abs().max(1.0));
        }
        assert!(matches!(transform_price(-1001.0, &t), Err(Error::Domain(_))));
        assert!(matches!(transform_price(-1200.0, &t), Err(Error::Domain(_))));
        assert_relative_eq!(t.upper_y(), 15_501f64.ln());
        let cap_only = PriceTransform {
            upper_convention: UpperBoundConvention::CapOnly,
            ..t
        };
        assert_relative_eq!(cap_only.upper_y(), 9.582, epsilon = 1e-3);
        assert_relative_eq!(cap_only.with_cap(14_700.0).upper_y(), 9.596, epsilon = 1e-3);
    }

    #[test]
    fn kde_errors() {
        let few = vec![0.5; 10];
        assert!(matches!(
            fit_bounded_kde(&few, 0.0, 1.0, None),
            Err(Error::InvalidInput(_))
        ));
        let same = vec![0.5; 40];
        assert!(matches!(
            fit_bounded_kde(&same, 0.0, 1.0, None),
            Err(Error::DegenerateSample(_))
        ));
        let mut out: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        out[3] = 1.5;
        out[7] = -0.2;
        match fit_bounded_kde(&out, 0.0, 1.0, None) {
            Err(Error::OutOfBounds { offenders, .. }) => assert_eq!(offenders, vec![(3, 1.5), (7, -0.2)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_samples_give_flat_density() {
        let mut r = rng(1);
        let s: Vec<f64> = (0..100_000).map(|_| r.gen::<f64>()).collect();
        let m = fit_bounded_kde(&s, 0.0, 1.0, None).unwrap();
        for (g, p) in m.grid.iter().zip(&m.pdf) {
            if (0.1..=0.9).contains(g) {
                assert!((p - 1.0).abs() < 0.05, "pdf({g}) = {p}");
            }
        }
        assert!((m.quantile(0.25).unwrap() - 0.25).abs() < 0.01);
    }

    #[test]
    fn huge_bandwidth_keeps_mass() {
        let s: Vec<f64> = (0..50).map(|i| 0.5 + 1e-4 * i as f64).collect();
        let m = fit_bounded_kde(&s, 0.0, 1.0, Some(25.0)).unwrap();
        assert_relative_eq!(trapz(&m), 1.0, epsilon = 1e-9);
        // reflection over all images makes the density essentially flat
        assert!(m.pdf.iter().all(|p| (p - 1.0).abs() < 1e-3));
    }

    #[test]
    fn invariants_hold() {
        let mut r = rng(4);
        let s: Vec<f64> = (0..3000)
            .map(|_| (r.gen::<f64>() * r.gen::<f64>()) * 3.0 - 1.0)
            .collect();
        let m = fit_bounded_kde(&s, -1.0, 2.0, None).unwrap();
        assert!((trapz(&m) - 1.0).abs() < 1e-6);
        assert_eq!(m.cdf[0], 0.0);
        assert_eq!(*m.cdf.last().unwrap(), 1.0);
        assert!(m.cdf.windows(2).all(|w| w[1] >= w[0]));
        let mut acc = 0.0;
        for i in 1..m.grid.len() {
            acc += 0.5 * (m.pdf[i] + m.pdf[i - 1]) * (m.grid[i] - m.grid[i - 1]);
            assert!((acc - m.cdf[i]).abs() < 1e-10);
        }
        assert_eq!(m.pdf(-1.5), 0.0);
        assert_eq!(m.pdf(2.01), 0.0);
        assert_eq!(m.cdf(-3.0), 0.0);
        assert_eq!(m.cdf(5.0), 1.0);
        assert!(matches!(m.quantile(0.0), Err(Error::Domain(_))));
        assert!(matches!(m.quantile(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn symmetric_margin_median() {
        let mut r = rng(5);
        let mut s: Vec<f64> = (0..2000).map(|_| r.gen_range(-0.7..0.7)).collect();
        let mirrored: Vec<f64> = s.iter().map(|v| -v).collect();
        s.extend(mirrored);
        let m = fit_bounded_kde(&s, -1.0, 1.0, None).unwrap();
        let dx = m.grid[1] - m.grid[0];
        assert!(m.quantile(0.5).unwrap().abs() < dx);
        assert!(m.normal_score(0.0).abs() < 1e-2);
    }

    #[test]
    fn cdf_quantile_roundtrip() {
        let mut r = rng(6);
        let s: Vec<f64> = (0..5000).map(|_| r.gen::<f64>().powi(2) * 4.0).collect();
        let m = fit_bounded_kde(&s, 0.0, 4.0, None).unwrap();
        for k in 1..1000 {
            let u = 1e-4 + (1.0 - 2e-4) * k as f64 / 1000.0;
            let q = m.quantile(u).unwrap();
            assert!((m.cdf(q) - u).abs() < 1e-9, "u={u}");
        }
        let dx = m.grid[1] - m.grid[0];
        let h = m.bandwidth;
        for k in 0..500 {
            let y = h + (4.0 - 2.0 * h) * k as f64 / 499.0;
            let back = m.from_normal_score(m.normal_score(y));
            assert!((back - y).abs() <= dx, "y={y} back={back}");
        }
    }

    #[test]
    fn normal_scores_are_monotone_and_finite() {
        let mut r = rng(7);
        let s: Vec<f64> = (0..500).map(|_| r.gen::<f64>()).collect();
        let m = fit_bounded_kde(&s, 0.0, 1.0, None).unwrap();
        let y: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let z = to_normal_scores(&m, &y);
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(z.windows(2).all(|w| w[1] >= w[0]));
        assert_relative_eq!(z[0], stats::norm_quantile(CDF_EPS));
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let mut r = rng(8);
        let s: Vec<f64> = (0..200).map(|_| r.gen::<f64>() * 9.0).collect();
        let m = fit_bounded_kde_on_grid(&s, 0.0, 9.6, None, 257).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = MarginModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }
}
