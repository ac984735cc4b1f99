//! Per-unit posteriors, lfdr/lfsr statistics, and discovery lists.

use ndarray::Array2;
use rayon::prelude::*;

use crate::densities::ComponentTensor;
use crate::error::{Error, Result};
use crate::estimator::MixingPair;
use crate::grids::EffectGrid;

/// Posterior mass over the effect grid for every unit, with the derived
/// local false discovery and sign rates.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    mass: Array2<f64>,
    lfdr: Vec<f64>,
    lfsr: Vec<f64>,
    mode_index: usize,
}

impl PosteriorTable {
    /// m x (2K+1) matrix; row i is P(theta_i = a_k | x_i, s_i²).
    pub fn mass(&self) -> &Array2<f64> {
        &self.mass
    }

    pub fn lfdr(&self) -> &[f64] {
        &self.lfdr
    }

    pub fn lfsr(&self) -> &[f64] {
        &self.lfsr
    }

    pub fn num_units(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mode_index(&self) -> usize {
        self.mode_index
    }

    /// Posterior mean effect per unit.
    pub fn mean_effects(&self, eg: &EffectGrid) -> Vec<f64> {
        let pts = eg.points();
        self.mass
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(pts).map(|(&p, &a)| p * a).sum())
            .collect()
    }
}

/// lfdr and lfsr of a single posterior row: lfdr is the mass at the null
/// point; lfsr is the smaller of the two tail masses, each including the
/// null point.
pub(crate) fn row_statistics(row: &[f64], mode: usize) -> (f64, f64) {
    let lfdr = row[mode];
    let lower: f64 = row[..=mode].iter().sum();
    let upper: f64 = row[mode..].iter().sum();
    (lfdr, lower.min(upper))
}

/// Computes the posterior table: row i entry k is proportional to
/// `g_k * sum_l h_l c_{i,k,l}`, normalized over k.
pub fn posterior(tensor: &ComponentTensor, mix: &MixingPair) -> Result<PosteriorTable> {
    let (ng, nh) = (tensor.n_effects(), tensor.n_variances());
    if mix.g().len() != ng || mix.h().len() != nh {
        return Err(Error::DimensionMismatch(format!(
            "mixing pair is {}+{} but tensor is {ng}x{nh}",
            mix.g().len(),
            mix.h().len()
        )));
    }
    let m = tensor.num_units();
    let mode = mix.mode_index();
    let g = mix.g();
    let h = mix.h();

    let mut mass = Array2::zeros((m, ng));
    let rows: Vec<_> = mass
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(ng)
        .enumerate()
        .map(|(i, out)| {
            let mut scratch = vec![0.0; ng * nh];
            let slice = tensor.unit_slice(i, &mut scratch);
            let mut total = 0.0;
            for k in 0..ng {
                let row = &slice[k * nh..(k + 1) * nh];
                let mut u = 0.0;
                for (l, &c) in row.iter().enumerate() {
                    u += h[l] * c;
                }
                let w = g[k] * u;
                out[k] = w;
                total += w;
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NumericalDegeneracy {
                    unit: i,
                    detail: "posterior row has no representable mass".into(),
                });
            }
            for v in out.iter_mut() {
                *v /= total;
            }
            Ok(())
        })
        .collect();
    for r in rows {
        r?;
    }

    let mut lfdr = vec![0.0; m];
    let mut lfsr = vec![0.0; m];
    for (i, row) in mass.rows().into_iter().enumerate() {
        let (d, s) = row_statistics(row.as_slice().expect("contiguous row"), mode);
        lfdr[i] = d;
        lfsr[i] = s;
    }
    Ok(PosteriorTable {
        mass,
        lfdr,
        lfsr,
        mode_index: mode,
    })
}

/// Which per-unit statistic drives a discovery list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Lfdr,
    Lfsr,
}

impl Statistic {
    pub fn values<'a>(&self, table: &'a PosteriorTable) -> &'a [f64] {
        match self {
            Statistic::Lfdr => table.lfdr(),
            Statistic::Lfsr => table.lfsr(),
        }
    }
}

/// Rule mapping a statistic vector and a level to a discovery set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListRule {
    /// All units with statistic <= level; the expected false discovery rate
    /// of the list, given the data, is dominated by the level.
    Threshold,
    /// Largest prefix of the sorted statistics whose running mean stays at
    /// or below the level; ties at the boundary move in or out together.
    CumulativeMean,
}

/// FDR-controlled discovery set at a given level.
#[derive(Debug, Clone)]
pub struct DiscoveryList {
    pub level: f64,
    pub rule: ListRule,
    pub statistic: Statistic,
    /// Unit indices in ascending order.
    pub indices: Vec<usize>,
}

/// Builds the discovery list at `level` from the chosen statistic and rule.
pub fn discovery_list(
    table: &PosteriorTable,
    level: f64,
    statistic: Statistic,
    rule: ListRule,
) -> Result<DiscoveryList> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "level must be in (0, 1), got {level}"
        )));
    }
    let values = statistic.values(table);
    let indices = match rule {
        ListRule::Threshold => values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= level)
            .map(|(i, _)| i)
            .collect(),
        ListRule::CumulativeMean => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| {
                values[a]
                    .partial_cmp(&values[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            // prefix means of sorted values are nondecreasing, so the
            // largest admissible prefix ending at a tie-block boundary is
            // well-defined
            let mut best = 0;
            let mut running = 0.0;
            let mut j = 0;
            while j < order.len() {
                let v = values[order[j]];
                let mut block_end = j + 1;
                while block_end < order.len() && values[order[block_end]] == v {
                    block_end += 1;
                }
                let mut block_sum = 0.0;
                for &idx in &order[j..block_end] {
                    block_sum += values[idx];
                }
                running += block_sum;
                if running / block_end as f64 <= level {
                    best = block_end;
                } else {
                    break;
                }
                j = block_end;
            }
            let mut idx: Vec<usize> = order[..best].to_vec();
            idx.sort_unstable();
            idx
        }
    };
    Ok(DiscoveryList {
        level,
        rule,
        statistic,
        indices,
    })
}

/// The fitted prior mass at the null grid point.
pub fn pi0_estimate(mix: &MixingPair) -> f64 {
    mix.g()[mix.mode_index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{build_component_tensor, UnitStats};
    use crate::grids::{EffectGrid, VarianceGrid};
    use approx::assert_relative_eq;

    fn small_table(lfdr: Vec<f64>) -> PosteriorTable {
        let m = lfdr.len();
        PosteriorTable {
            mass: Array2::zeros((m, 3)),
            lfsr: lfdr.clone(),
            lfdr,
            mode_index: 1,
        }
    }

    #[test]
    fn point_mass_prior_gives_unit_lfdr() {
        let stats = vec![
            UnitStats::new(0.5, 1.0, 4.0).unwrap(),
            UnitStats::new(-1.2, 0.7, 4.0).unwrap(),
        ];
        let eg = EffectGrid::from_points(vec![-2.0, 0.0, 2.0]).unwrap();
        let vg = VarianceGrid::from_points(vec![0.5, 1.5]).unwrap();
        let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
        let mix = MixingPair::new(vec![0.0, 1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let post = posterior(&tensor, &mix).unwrap();
        for i in 0..2 {
            assert_eq!(post.mass()[[i, 1]], 1.0);
            assert_eq!(post.lfdr()[i], 1.0);
            assert_eq!(post.lfsr()[i], 1.0);
        }
    }

    #[test]
    fn symmetric_row_statistics() {
        let (lfdr, lfsr) = row_statistics(&[0.25, 0.5, 0.25], 1);
        assert_relative_eq!(lfdr, 0.5, max_relative = 1e-15);
        assert_relative_eq!(lfsr, 0.75, max_relative = 1e-15);
    }

    #[test]
    fn posterior_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
        for _ in 0..10 {
            let stats: Vec<UnitStats> = (0..6)
                .map(|_| {
                    UnitStats::new(
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(0.3..2.0),
                        rng.gen_range(3.0..20.0),
                    )
                    .unwrap()
                })
                .collect();
            let eg = crate::grids::build_effect_grid(&stats, 2, 0.0).unwrap();
            let vg = crate::grids::build_variance_grid(&stats, 3).unwrap();
            let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
            let mix = MixingPair::new(
                vec![0.05, 0.15, 0.5, 0.2, 0.1],
                vec![0.3, 0.4, 0.3],
            )
            .unwrap();
            let post = posterior(&tensor, &mix).unwrap();
            for i in 0..stats.len() {
                let mut row = vec![0.0; eg.len()];
                let mut total = 0.0;
                for k in 0..eg.len() {
                    let mut u = 0.0;
                    for l in 0..vg.len() {
                        u += mix.h()[l] * tensor.entry(i, k, l);
                    }
                    row[k] = mix.g()[k] * u;
                    total += row[k];
                }
                for (k, &w) in row.iter().enumerate() {
                    assert_relative_eq!(post.mass()[[i, k]], w / total, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn threshold_list_examples() {
        let table = small_table(vec![0.01, 0.05, 0.2]);
        let list = discovery_list(&table, 0.1, Statistic::Lfdr, ListRule::Threshold).unwrap();
        assert_eq!(list.indices, vec![0, 1]);
        let all_one = small_table(vec![1.0, 1.0, 1.0]);
        let empty = discovery_list(&all_one, 0.5, Statistic::Lfdr, ListRule::Threshold).unwrap();
        assert!(empty.indices.is_empty());
    }

    #[test]
    fn cumulative_mean_list_examples() {
        let table = small_table(vec![0.01, 0.05, 0.2]);
        // mean(0.01, 0.05, 0.2) = 0.0867 <= 0.1 so everything enters
        let list =
            discovery_list(&table, 0.1, Statistic::Lfdr, ListRule::CumulativeMean).unwrap();
        assert_eq!(list.indices, vec![0, 1, 2]);
        // at 0.04 the prefix stops after two entries: mean(0.01, 0.05) = 0.03
        let list =
            discovery_list(&table, 0.04, Statistic::Lfdr, ListRule::CumulativeMean).unwrap();
        assert_eq!(list.indices, vec![0, 1]);
    }

    #[test]
    fn cumulative_mean_ties_move_together() {
        let table = small_table(vec![0.02, 0.1, 0.1, 0.1, 0.5]);
        // prefix {0.02}: mean 0.02; adding the 0.1-block: mean 0.08 <= 0.09
        let list =
            discovery_list(&table, 0.09, Statistic::Lfdr, ListRule::CumulativeMean).unwrap();
        assert_eq!(list.indices, vec![0, 1, 2, 3]);
        // at 0.05 the whole 0.1-block would push the mean to 0.08 > 0.05, so
        // all three tied units stay out
        let list =
            discovery_list(&table, 0.05, Statistic::Lfdr, ListRule::CumulativeMean).unwrap();
        assert_eq!(list.indices, vec![0]);
    }

    #[test]
    fn invalid_level_rejected() {
        let table = small_table(vec![0.1]);
        assert!(discovery_list(&table, 0.0, Statistic::Lfdr, ListRule::Threshold).is_err());
        assert!(discovery_list(&table, 1.0, Statistic::Lfdr, ListRule::Threshold).is_err());
    }

    #[test]
    fn pi0_reads_the_null_mass() {
        let mix = MixingPair::new(vec![0.0, 1.0, 0.0], vec![1.0]).unwrap();
        assert_eq!(pi0_estimate(&mix), 1.0);
        let n = 31;
        let mix = MixingPair::uniform(n, 3);
        assert_relative_eq!(pi0_estimate(&mix), 1.0 / n as f64, max_relative = 1e-15);
    }
}
