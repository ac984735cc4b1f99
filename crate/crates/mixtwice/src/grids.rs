//! Discrete supports for the two mixing distributions.
//!
//! Effects live on a regular grid of `2K+1` points symmetric about the null
//! value; variances live on a regular grid of `L` strictly positive points
//! wide enough to cover the latent variances that plausibly generated the
//! observed squared standard errors.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::densities::UnitStats;
use crate::error::{Error, Result};

/// Quantile levels used to inflate the observed s² range into a variance grid.
const VAR_GRID_Q_LO: f64 = 0.005;
const VAR_GRID_Q_HI: f64 = 0.995;

/// Regular grid of `2K+1` candidate effect values, symmetric about the null.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectGrid {
    points: Vec<f64>,
    mode_index: usize,
    spacing: f64,
}

impl EffectGrid {
    /// Builds a grid from explicit points, validating regularity and symmetry.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 || points.len() % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "effect grid needs an odd number of points >= 3, got {}",
                points.len()
            )));
        }
        let mode_index = points.len() / 2;
        let spacing = points[1] - points[0];
        if !(spacing > 0.0) {
            return Err(Error::InvalidInput(
                "effect grid points must be strictly increasing".into(),
            ));
        }
        for w in points.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - spacing).abs() > 1e-9 * spacing.max(1.0) {
                return Err(Error::InvalidInput(
                    "effect grid must be regular and strictly increasing".into(),
                ));
            }
        }
        let center = points[mode_index];
        for k in 1..=mode_index {
            let lo = center - points[mode_index - k];
            let hi = points[mode_index + k] - center;
            if (lo - hi).abs() > 1e-9 * hi.abs().max(1.0) {
                return Err(Error::InvalidInput(
                    "effect grid must be symmetric about its center".into(),
                ));
            }
        }
        Ok(Self {
            points,
            mode_index,
            spacing,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of grid points, `2K+1`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the null value `a_0` within `points`.
    pub fn mode_index(&self) -> usize {
        self.mode_index
    }

    /// `K`, the number of points on each side of the null.
    pub fn half_width(&self) -> usize {
        self.mode_index
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn null_value(&self) -> f64 {
        self.points[self.mode_index]
    }
}

/// Grid of `L` strictly positive candidate variances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceGrid {
    points: Vec<f64>,
}

impl VarianceGrid {
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("variance grid needs L >= 1".into()));
        }
        if !(points[0] > 0.0) {
            return Err(Error::InvalidInput(
                "variance grid points must be strictly positive".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(
                    "variance grid points must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `L`, the number of grid points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Builds the effect grid spanning the observed effects.
///
/// The grid is centered at `null_value` with outermost point at
/// `null_value + max_i |x_i - null_value|` and `K` cells per side.
pub fn build_effect_grid(stats: &[UnitStats], k: usize, null_value: f64) -> Result<EffectGrid> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no units supplied".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("effect grid needs K >= 1".into()));
    }
    if !null_value.is_finite() {
        return Err(Error::InvalidInput("null value must be finite".into()));
    }
    let mut half_range = 0.0_f64;
    for u in stats {
        if !u.x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "effect estimate {} is not finite",
                u.x
            )));
        }
        half_range = half_range.max((u.x - null_value).abs());
    }
    if half_range == 0.0 {
        return Err(Error::DegenerateRange(
            "all effect estimates equal the null value; grid width would be zero".into(),
        ));
    }
    let spacing = half_range / k as f64;
    let mut points = vec![0.0; 2 * k + 1];
    points[k] = null_value;
    for j in 1..=k {
        // offsets are shared between the two sides so the grid reflects onto
        // itself exactly
        let w = if j == k { half_range } else { j as f64 * spacing };
        points[k + j] = null_value + w;
        points[k - j] = null_value - w;
    }
    Ok(EffectGrid {
        points,
        mode_index: k,
        spacing,
    })
}

/// Spacing rule for the variance grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceSpacing {
    #[default]
    Linear,
    /// Geometric spacing, for heavy-tailed s² distributions.
    Log,
}

/// Builds the variance grid covering latent variances consistent with the data.
///
/// The observed range of s² is inflated by chi-square quantiles: a latent
/// variance b is plausible for unit i when nu*s²/b falls between the 0.005 and
/// 0.995 quantiles of chi-square(nu), so the grid spans
/// `[min_i s_i²/q_hi(nu_i), max_i s_i²/q_lo(nu_i)]` with `q_p(nu)` the p-quantile
/// of chi-square(nu)/nu. `L = 1` collapses to the midpoint.
pub fn build_variance_grid(stats: &[UnitStats], l: usize) -> Result<VarianceGrid> {
    build_variance_grid_spaced(stats, l, VarianceSpacing::Linear)
}

pub fn build_variance_grid_spaced(
    stats: &[UnitStats],
    l: usize,
    spacing: VarianceSpacing,
) -> Result<VarianceGrid> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no units supplied".into()));
    }
    if l == 0 {
        return Err(Error::InvalidInput("variance grid needs L >= 1".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for u in stats {
        if !(u.s2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "squared standard error must be positive, got {}",
                u.s2
            )));
        }
        if !(u.nu > 0.0) {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be positive, got {}",
                u.nu
            )));
        }
        let q_lo = chi2_quantile_over_nu(VAR_GRID_Q_LO, u.nu)?;
        let q_hi = chi2_quantile_over_nu(VAR_GRID_Q_HI, u.nu)?;
        lo = lo.min(u.s2 / q_hi);
        hi = hi.max(u.s2 / q_lo);
    }
    debug_assert!(lo <= hi);
    if l == 1 {
        let mid = match spacing {
            VarianceSpacing::Linear => 0.5 * (lo + hi),
            VarianceSpacing::Log => (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp(),
        };
        return VarianceGrid::from_points(vec![mid]);
    }
    let n = l as f64 - 1.0;
    let points: Vec<f64> = match spacing {
        VarianceSpacing::Linear => {
            let step = (hi - lo) / n;
            (0..l).map(|j| (j as f64).mul_add(step, lo)).collect()
        }
        VarianceSpacing::Log => {
            let step = (hi.ln() - lo.ln()) / n;
            (0..l)
                .map(|j| (j as f64).mul_add(step, lo.ln()).exp())
                .collect()
        }
    };
    VarianceGrid::from_points(points)
}

/// p-quantile of chi-square(nu)/nu.
///
/// The library's generic inverse CDF is only accurate to ~1e-5, so the
/// starting point is polished with Newton steps against the accurate CDF.
fn chi2_quantile_over_nu(p: f64, nu: f64) -> Result<f64> {
    use statrs::distribution::Continuous;
    let dist = ChiSquared::new(nu)
        .map_err(|e| Error::InvalidInput(format!("chi-square({nu}): {e}")))?;
    let mut x = dist.inverse_cdf(p);
    for _ in 0..4 {
        let pdf = dist.ln_pdf(x).exp();
        if !(pdf > 0.0) || !pdf.is_finite() {
            break;
        }
        let step = (dist.cdf(x) - p) / pdf;
        let next = x - step;
        if !(next > 0.0) {
            break;
        }
        x = next;
        if step.abs() <= 1e-14 * x {
            break;
        }
    }
    Ok(x / nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(xs: &[f64]) -> Vec<UnitStats> {
        xs.iter()
            .map(|&x| UnitStats::new(x, 1.0, 10.0).unwrap())
            .collect()
    }

    #[test]
    fn effect_grid_spans_data_symmetrically() {
        let eg = build_effect_grid(&units(&[-1.0, 0.5, 1.0]), 2, 0.0).unwrap();
        assert_eq!(eg.points(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(eg.mode_index(), 2);
        assert_eq!(eg.spacing(), 0.5);
    }

    #[test]
    fn effect_grid_single_cell_per_side() {
        let eg = build_effect_grid(&units(&[0.3]), 1, 0.0).unwrap();
        assert_eq!(eg.points(), &[-0.3, 0.0, 0.3]);
    }

    #[test]
    fn effect_grid_degenerate_range_is_error() {
        let err = build_effect_grid(&units(&[0.0, 0.0, 0.0]), 15, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateRange(_)));
    }

    #[test]
    fn effect_grid_reflects_onto_itself() {
        let eg = build_effect_grid(&units(&[-0.7, 0.2, 1.3, 0.9]), 7, 0.0).unwrap();
        let a0 = eg.null_value();
        let n = eg.len();
        for k in 0..n {
            let reflected = 2.0 * a0 - eg.points()[k];
            assert_eq!(reflected.to_bits(), eg.points()[n - 1 - k].to_bits());
        }
    }

    #[test]
    fn effect_grid_nonzero_null_keeps_symmetry() {
        let eg = build_effect_grid(&units(&[0.1, 1.9, 0.4]), 5, 0.7).unwrap();
        assert_eq!(eg.null_value(), 0.7);
        let a0 = eg.null_value();
        let n = eg.len();
        for k in 0..n {
            let reflected = 2.0 * a0 - eg.points()[k];
            let expect = eg.points()[n - 1 - k];
            assert!((reflected - expect).abs() <= 4.0 * f64::EPSILON * expect.abs().max(1.0));
        }
        // every observation inside the span
        for x in [0.1, 1.9, 0.4] {
            assert!(x >= eg.points()[0] && x <= eg.points()[n - 1]);
        }
    }

    #[test]
    fn variance_grid_large_nu_single_point() {
        let stats = vec![UnitStats::new(0.0, 1.0, 1e6).unwrap()];
        let vg = build_variance_grid(&stats, 1).unwrap();
        assert_eq!(vg.len(), 1);
        assert!((vg.points()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn variance_grid_matches_chi_square_quantile_oracle() {
        // chi-square(10) quantiles from an independent reference implementation:
        // 0.005 and 0.995 quantiles are 2.155856481304639 and 25.18817957197117.
        let q_lo = 2.155856481304639 / 10.0;
        let q_hi = 25.18817957197117 / 10.0;
        let stats = vec![UnitStats::new(0.0, 1.0, 10.0).unwrap()];
        let vg = build_variance_grid(&stats, 3).unwrap();
        assert_eq!(vg.len(), 3);
        let pts = vg.points();
        assert!((pts[0] - 1.0 / q_hi).abs() < 1e-6 * (1.0 / q_hi));
        assert!((pts[2] - 1.0 / q_lo).abs() < 1e-6 * (1.0 / q_lo));
        // equal spacing
        let d0 = pts[1] - pts[0];
        let d1 = pts[2] - pts[1];
        assert!((d0 - d1).abs() <= 1e-12 * d0.abs());
    }

    #[test]
    fn variance_grid_rejects_nonpositive_s2() {
        let bad = UnitStats {
            x: 0.0,
            s2: 0.0,
            nu: 10.0,
        };
        let err = build_variance_grid(&[bad], 3).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn variance_grid_log_spacing_is_geometric() {
        let stats = vec![
            UnitStats::new(0.0, 0.5, 8.0).unwrap(),
            UnitStats::new(0.0, 4.0, 8.0).unwrap(),
        ];
        let vg = build_variance_grid_spaced(&stats, 4, VarianceSpacing::Log).unwrap();
        let pts = vg.points();
        let r0 = pts[1] / pts[0];
        let r1 = pts[2] / pts[1];
        let r2 = pts[3] / pts[2];
        assert!((r0 - r1).abs() < 1e-9 * r0);
        assert!((r1 - r2).abs() < 1e-9 * r1);
    }

    #[test]
    fn explicit_grids_validate() {
        assert!(EffectGrid::from_points(vec![-1.0, 0.0, 1.0]).is_ok());
        assert!(EffectGrid::from_points(vec![-1.0, 0.0]).is_err());
        assert!(EffectGrid::from_points(vec![-1.0, 0.0, 0.5]).is_err());
        assert!(VarianceGrid::from_points(vec![1.0]).is_ok());
        assert!(VarianceGrid::from_points(vec![1.0, 0.5]).is_err());
        assert!(VarianceGrid::from_points(vec![-1.0, 0.5]).is_err());
    }
}
