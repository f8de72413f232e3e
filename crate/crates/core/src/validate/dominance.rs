use std::collections::BTreeMap;
use std::ops::{Add, Div};

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use super::scenario::decimal_rational;
use super::space::{all_pairs_nested, is_partition, FiniteAssignmentSpace, Partition, PartitionFamily};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Largest space enumerated exactly in automatic mode.
pub const DEFAULT_EXACT_LIMIT: usize = 1_000_000;
/// Total-variation gap below which two statistics count as independent.
pub const INDEPENDENCE_TOL: f64 = 1e-12;

/// Potential outcomes `Y_it(z)` for every element `z` of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    n_elements: usize,
    n_units: usize,
    n_times: usize,
    storage: Storage,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// The same outcomes under every assignment (no effect at all).
    Shared(Vec<Vec<f64>>),
    PerElement(Vec<Vec<Vec<f64>>>),
}

fn check_rows(rows: &[Vec<f64>], n_times: usize) -> Result<()> {
    match rows.iter().find(|r| r.len() != n_times) {
        Some(r) => Err(Error::Validation(format!("outcome row has {} times, expected {n_times}", r.len()))),
        None => Ok(()),
    }
}

impl PotentialOutcomeTable {
    /// Effect-free table: unit outcomes do not depend on the assignment.
    pub fn effect_free(rows: Vec<Vec<f64>>, n_elements: usize) -> Result<Self> {
        let n_times = rows.first().map_or(0, Vec::len);
        check_rows(&rows, n_times)?;
        Ok(Self { n_elements, n_units: rows.len(), n_times, storage: Storage::Shared(rows) })
    }

    pub fn per_element(tables: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::Validation("outcome table is empty".into()))?;
        let (n_units, n_times) = (first.len(), first.first().map_or(0, Vec::len));
        for t in &tables {
            if t.len() != n_units {
                return Err(Error::Validation(format!("outcome table has {} units, expected {n_units}", t.len())));
            }
            check_rows(t, n_times)?;
        }
        Ok(Self { n_elements: tables.len(), n_units, n_times, storage: Storage::PerElement(tables) })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn outcome(&self, z: usize, unit: usize, t: usize) -> f64 {
        match &self.storage {
            Storage::Shared(rows) => rows[unit][t],
            Storage::PerElement(tables) => tables[z][unit][t],
        }
    }
}

/// A deterministic test statistic `T(z, W)`. With an effect-free table the
/// outcomes under `z` equal the observed ones, so this is the statistic the
/// randomization test evaluates at `z`.
pub trait ValidationStatistic: Sync {
    fn value(&self, z: usize, w: &PotentialOutcomeTable) -> f64;
}

impl<F: Fn(usize, &PotentialOutcomeTable) -> f64 + Sync> ValidationStatistic for F {
    fn value(&self, z: usize, w: &PotentialOutcomeTable) -> f64 {
        self(z, w)
    }
}

/// Statistic given by one value per element.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedStatistic(pub Vec<f64>);

impl ValidationStatistic for TabulatedStatistic {
    fn value(&self, z: usize, _: &PotentialOutcomeTable) -> f64 {
        self.0[z]
    }
}

fn tabulate(stats: &[&dyn ValidationStatistic], w: &PotentialOutcomeTable, n: usize) -> Result<Vec<Vec<f64>>> {
    stats
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let v: Vec<f64> = (0..n).map(|z| s.value(z, w) + 0.0).collect();
            match v.iter().position(|x| !x.is_finite()) {
                Some(z) => Err(Error::Validation(format!("statistic {} is not finite at element {z}", k + 1))),
                None => Ok(v),
            }
        })
        .collect()
}

/// `P(z) = pi{z* in S_z : T(z*) <= T(z)} / pi(S_z)` for every element.
fn pvalues_with<T>(partition: &Partition, values: &[f64], probs: &[T]) -> Vec<T>
where
    T: Clone + Zero + Add<Output = T> + Div<Output = T>,
{
    let mut out = vec![T::zero(); values.len()];
    for mut cell in partition.cells() {
        cell.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let total = cell.iter().fold(T::zero(), |acc, &z| acc + probs[z].clone());
        let mut acc = T::zero();
        let mut start = 0;
        while start < cell.len() {
            let mut end = start;
            while end < cell.len() && values[cell[end]] == values[cell[start]] {
                acc = acc + probs[cell[end]].clone();
                end += 1;
            }
            let p = acc.clone() / total.clone();
            for &z in &cell[start..end] {
                out[z] = p.clone();
            }
            start = end;
        }
    }
    out
}

/// Exact conditional p-values of one test at every element.
pub fn exact_pvalues(space: &FiniteAssignmentSpace, partition: &Partition, values: &[f64]) -> Vec<BigRational> {
    pvalues_with(partition, values, space.probs())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DominanceMode {
    /// Exact up to [`DEFAULT_EXACT_LIMIT`] elements, Monte-Carlo above.
    #[default]
    Auto,
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceCell {
    pub alphas: Vec<f64>,
    /// `P{P^(k) <= alpha_k for all k}`.
    pub joint: f64,
    pub joint_exact: Option<BigRational>,
    pub bound: f64,
    /// Monte-Carlo standard error; `None` when exact.
    pub stderr: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub exact: bool,
    pub cells: Vec<DominanceCell>,
    /// Bound checked within every cell of the coarsest common partition;
    /// `None` when that coarsening is not a partition or in Monte-Carlo mode.
    pub conditional_holds: Option<bool>,
    /// Largest `P{all p <= alpha | G} / prod alpha` over cells `G`.
    pub conditional_max_ratio: Option<f64>,
    /// Nestedness and conditional independence both verified.
    pub conditions_verified: bool,
}

impl DominanceReport {
    pub fn holds(&self) -> bool {
        self.cells.iter().all(|c| c.holds) && self.conditional_holds != Some(false)
    }
}

fn alpha_grid(alphas: &[Vec<f64>]) -> Vec<Vec<f64>> {
    alphas.iter().fold(vec![Vec::new()], |acc, level| {
        acc.iter()
            .flat_map(|prefix| {
                level.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect()
    })
}

/// Checks `P{P^(1) <= a_1, ..., P^(K) <= a_K} <= prod a_k` for every
/// combination of the per-test levels in `alphas`. Exact p-values come from
/// enumerating each conditioning cell; the joint probability is exact too
/// unless the space is too large, in which case elements are sampled.
pub fn joint_dominance_check(
    space: &FiniteAssignmentSpace,
    family: &PartitionFamily,
    w: &PotentialOutcomeTable,
    stats: &[&dyn ValidationStatistic],
    alphas: &[Vec<f64>],
    mode: DominanceMode,
) -> Result<DominanceReport> {
    let n = space.len();
    if family.n_elements() != n {
        return Err(Error::Validation(format!("family labels {} elements, space has {n}", family.n_elements())));
    }
    if stats.len() != family.len() || alphas.len() != family.len() {
        return Err(Error::Validation(format!(
            "{} partitions, {} statistics and {} alpha lists",
            family.len(),
            stats.len(),
            alphas.len()
        )));
    }
    if let Some(a) = alphas.iter().flatten().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::Validation(format!("level {a} is not in (0, 1]")));
    }
    let values = tabulate(stats, w, n)?;
    let conditions_verified = all_pairs_nested(family).is_ok()
        && (0..family.len()).all(|j| {
            (j + 1..family.len()).all(|k| {
                cond_indep_tabulated(space, family, &values, j, k).is_ok_and(|r| r.independent)
            })
        });
    let exact = match mode {
        DominanceMode::Auto => n <= DEFAULT_EXACT_LIMIT,
        DominanceMode::Exact => true,
        DominanceMode::MonteCarlo { .. } => false,
    };
    let grid = alpha_grid(alphas);
    if exact {
        exact_dominance(space, family, &values, &grid, conditions_verified)
    } else {
        let (draws, seed) = match mode {
            DominanceMode::MonteCarlo { draws, seed } => (draws, seed),
            _ => (100_000, 0),
        };
        mc_dominance(space, family, &values, &grid, draws, seed, conditions_verified)
    }
}

fn exact_dominance(
    space: &FiniteAssignmentSpace,
    family: &PartitionFamily,
    values: &[Vec<f64>],
    grid: &[Vec<f64>],
    conditions_verified: bool,
) -> Result<DominanceReport> {
    let n = space.len();
    let pvals: Vec<Vec<BigRational>> = (0..family.len())
        .into_par_iter()
        .map(|k| exact_pvalues(space, family.get(k), &values[k]))
        .collect();
    let all: Vec<usize> = (0..family.len()).collect();
    let coarse = family.coarsening(&all)?;
    let coarse = is_partition(n, &coarse).ok.then_some(coarse);

    let mut cells = Vec::with_capacity(grid.len());
    let mut conditional_holds = coarse.as_ref().map(|_| true);
    let mut max_ratio: Option<f64> = coarse.as_ref().map(|_| 0.0);
    for alphas in grid {
        let levels: Vec<BigRational> = alphas.iter().map(|&a| decimal_rational(a)).collect();
        let bound: BigRational = levels.iter().product();
        let rejects = |z: usize| (0..family.len()).all(|k| pvals[k][z] <= levels[k]);
        let joint: BigRational = (0..n).filter(|&z| rejects(z)).map(|z| space.prob(z)).sum();
        if let Some(coarse) = &coarse {
            for g in coarse {
                let mass = space.mass(g);
                let hit: BigRational = g.iter().filter(|&&z| rejects(z)).map(|&z| space.prob(z)).sum();
                let cond = hit / mass;
                if cond > bound {
                    conditional_holds = Some(false);
                }
                let ratio = (cond / bound.clone()).to_f64().unwrap_or(f64::INFINITY);
                max_ratio = max_ratio.map(|m| m.max(ratio));
            }
        }
        cells.push(DominanceCell {
            alphas: alphas.clone(),
            joint: joint.to_f64().unwrap_or(f64::NAN),
            holds: joint <= bound,
            joint_exact: Some(joint),
            bound: bound.to_f64().unwrap_or(f64::NAN),
            stderr: None,
        });
    }
    Ok(DominanceReport {
        exact: true,
        cells,
        conditional_holds,
        conditional_max_ratio: max_ratio,
        conditions_verified,
    })
}

fn mc_dominance(
    space: &FiniteAssignmentSpace,
    family: &PartitionFamily,
    values: &[Vec<f64>],
    grid: &[Vec<f64>],
    draws: usize,
    seed: u64,
    conditions_verified: bool,
) -> Result<DominanceReport> {
    if draws == 0 {
        return Err(Error::ZeroBudget);
    }
    let probs: Vec<f64> = space.probs().iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
    let pvals: Vec<Vec<f64>> = (0..family.len())
        .into_par_iter()
        .map(|k| pvalues_with(family.get(k), &values[k], &probs))
        .collect();
    let index = WeightedIndex::new(&probs).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let sample: Vec<usize> = (0..draws).map(|_| index.sample(&mut rng)).collect();
    // Exact p-values can tie with a level; compare with a relative slack.
    let slack = 1e-12;
    let cells = grid
        .iter()
        .map(|alphas| {
            let hits = sample
                .iter()
                .filter(|&&z| (0..family.len()).all(|k| pvals[k][z] <= alphas[k] * (1.0 + slack)))
                .count();
            let joint = hits as f64 / draws as f64;
            let bound: f64 = alphas.iter().product();
            let stderr = (bound * (1.0 - bound) / draws as f64).sqrt();
            DominanceCell {
                alphas: alphas.clone(),
                joint,
                joint_exact: None,
                bound,
                stderr: Some(stderr),
                holds: joint <= bound + 3.0 * stderr,
            }
        })
        .collect();
    Ok(DominanceReport {
        exact: false,
        cells,
        conditional_holds: None,
        conditional_max_ratio: None,
        conditions_verified,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondIndepReport {
    pub j: usize,
    pub k: usize,
    pub independent: bool,
    /// Largest total-variation distance between the joint law of the two
    /// statistics and the product of its marginals, over refinement cells.
    pub max_gap: f64,
    pub worst_cell: Option<Vec<usize>>,
}

/// Within each cell of the refinement of partitions `j` and `k`, compares
/// the exact joint law of `(T^(j), T^(k))` with the product of marginals.
pub fn cond_indep_check(
    space: &FiniteAssignmentSpace,
    family: &PartitionFamily,
    w: &PotentialOutcomeTable,
    stats: &[&dyn ValidationStatistic],
    j: usize,
    k: usize,
) -> Result<CondIndepReport> {
    if j >= stats.len() || k >= stats.len() || j >= family.len() || k >= family.len() {
        return Err(Error::Validation(format!("test indices {j}, {k} out of range")));
    }
    let values = tabulate(&[stats[j], stats[k]], w, space.len())?;
    let mut table = vec![Vec::new(); family.len()];
    table[j] = values[0].clone();
    table[k] = values[1].clone();
    cond_indep_tabulated(space, family, &table, j, k)
}

fn cond_indep_tabulated(
    space: &FiniteAssignmentSpace,
    family: &PartitionFamily,
    values: &[Vec<f64>],
    j: usize,
    k: usize,
) -> Result<CondIndepReport> {
    let refinement = family.refinement(&[j, k])?;
    let key = |x: f64| (x + 0.0).to_bits();
    let mut max_gap = 0.0f64;
    let mut worst_cell = None;
    for cell in refinement.cells() {
        let mass = space.mass(&cell);
        let mut joint: BTreeMap<(u64, u64), BigRational> = BTreeMap::new();
        let mut mj: BTreeMap<u64, BigRational> = BTreeMap::new();
        let mut mk: BTreeMap<u64, BigRational> = BTreeMap::new();
        for &z in &cell {
            let p = space.prob(z) / &mass;
            let (a, b) = (key(values[j][z]), key(values[k][z]));
            *joint.entry((a, b)).or_insert_with(BigRational::zero) += &p;
            *mj.entry(a).or_insert_with(BigRational::zero) += &p;
            *mk.entry(b).or_insert_with(BigRational::zero) += &p;
        }
        let zero = BigRational::zero();
        let mut gap = BigRational::zero();
        for (a, pa) in &mj {
            for (b, pb) in &mk {
                let pab = joint.get(&(*a, *b)).unwrap_or(&zero);
                let d = pab - pa * pb;
                gap += if d < zero { -d } else { d };
            }
        }
        let gap = gap.to_f64().unwrap_or(f64::INFINITY) / 2.0;
        if gap > max_gap {
            max_gap = gap;
            worst_cell = Some(cell);
        }
    }
    Ok(CondIndepReport { j, k, independent: max_gap < INDEPENDENCE_TOL, max_gap, worst_cell })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_traits::One;

    fn space(n: usize) -> FiniteAssignmentSpace {
        FiniteAssignmentSpace::uniform((0..n).map(|z| format!("z{z}")).collect()).unwrap()
    }

    fn fam(parts: &[&[u8]]) -> PartitionFamily {
        PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap()
    }

    fn r(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn pvalues_by_cell() {
        let s = space(4);
        let p = Partition::from_labels([0, 0, 0, 1]);
        let v = exact_pvalues(&s, &p, &[3.0, 1.0, 3.0, 9.0]);
        assert_eq!(v, vec![BigRational::one(), r(1, 3), BigRational::one(), BigRational::one()]);
    }

    #[test]
    fn single_test_dominance() {
        let s = space(6);
        let f = fam(&[&[0, 0, 0, 1, 1, 1]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 6).unwrap();
        let t = TabulatedStatistic(vec![0.3, 0.1, 0.2, 5.0, 4.0, 4.0]);
        let rep = joint_dominance_check(&s, &f, &w, &[&t], &[vec![0.1, 0.5, 0.7, 1.0]], DominanceMode::Exact).unwrap();
        assert!(rep.exact && rep.holds() && rep.conditions_verified);
        // p-values are (1, 1/3, 2/3) and (1, 2/3, 2/3): only one element has p <= 0.5.
        assert_eq!(rep.cells[1].joint_exact.clone().unwrap(), r(1, 6));
        assert_eq!(rep.cells[0].joint, 0.0);
    }

    #[test]
    fn entangled_statistics_break_the_bound() {
        // Two tests on the trivial partition with identical statistics:
        // P1 = P2, so the joint probability equals the single one.
        let s = space(4);
        let f = fam(&[&[0; 4], &[0; 4]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 4).unwrap();
        let t = TabulatedStatistic(vec![1.0, 2.0, 3.0, 4.0]);
        let rep = joint_dominance_check(&s, &f, &w, &[&t, &t], &[vec![0.25, 0.5], vec![0.25, 0.5]], DominanceMode::Exact).unwrap();
        assert!(!rep.conditions_verified);
        assert!(!rep.holds());
        assert_eq!(rep.cells[0].joint_exact.clone().unwrap(), r(1, 4));
        assert_eq!(rep.cells[0].bound, 0.0625);
        let ci = cond_indep_check(&s, &f, &w, &[&t, &t], 0, 1).unwrap();
        assert!(!ci.independent && ci.max_gap > 0.1);
    }

    #[test]
    fn independent_blocks_have_zero_gap() {
        // Elements are pairs (a, b) in {0,1}^2, each coordinate its own block.
        let s = space(4);
        let f = fam(&[&[0; 4], &[0; 4]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 4).unwrap();
        let ta = |z: usize, _: &PotentialOutcomeTable| (z / 2) as f64;
        let tb = |z: usize, _: &PotentialOutcomeTable| (z % 2) as f64;
        let rep = cond_indep_check(&s, &f, &w, &[&ta, &tb], 0, 1).unwrap();
        assert!(rep.independent);
        assert_eq!(rep.max_gap, 0.0);
    }

    #[test]
    fn constant_within_finer_cells_is_independent() {
        let s = space(6);
        let f = fam(&[&[0; 6], &[0, 0, 1, 1, 2, 2]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 6).unwrap();
        let t1 = TabulatedStatistic(vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let t2 = TabulatedStatistic(vec![0.5, 0.7, 0.2, 0.1, 9.0, 8.0]);
        assert!(cond_indep_check(&s, &f, &w, &[&t1, &t2], 0, 1).unwrap().independent);
    }

    #[test]
    fn hand_built_dependence_is_detected() {
        // Joint table on six equally likely elements:
        //   T1: 0 0 0 1 1 1
        //   T2: 0 0 1 1 1 1
        let s = space(6);
        let f = fam(&[&[0; 6], &[0; 6]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 6).unwrap();
        let t1 = TabulatedStatistic(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let t2 = TabulatedStatistic(vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let rep = cond_indep_check(&s, &f, &w, &[&t1, &t2], 0, 1).unwrap();
        // |1/3 - 1/6| + |1/6 - 1/3| + |0 - 1/6| + |1/2 - 1/3| = 2/3, halved.
        assert!((rep.max_gap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let s = space(8);
        let f = fam(&[&[0; 8], &[0, 0, 0, 0, 1, 1, 1, 1]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 8).unwrap();
        let t1 = TabulatedStatistic(vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let t2 = TabulatedStatistic(vec![4.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 4.0]);
        let alphas = vec![vec![0.5, 1.0], vec![0.25, 0.5]];
        let exact = joint_dominance_check(&s, &f, &w, &[&t1, &t2], &alphas, DominanceMode::Exact).unwrap();
        let mc = joint_dominance_check(&s, &f, &w, &[&t1, &t2], &alphas, DominanceMode::MonteCarlo { draws: 20_000, seed: 4 }).unwrap();
        assert!(exact.holds() && mc.holds());
        assert_eq!(exact.conditional_holds, Some(true));
        for (e, m) in exact.cells.iter().zip(&mc.cells) {
            assert!((e.joint - m.joint).abs() < 0.02, "{e:?} {m:?}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = space(2);
        let f = fam(&[&[0, 0]]);
        let w = PotentialOutcomeTable::effect_free(vec![vec![0.0]], 2).unwrap();
        let t = TabulatedStatistic(vec![0.0, f64::NAN]);
        assert!(joint_dominance_check(&s, &f, &w, &[&t], &[vec![0.5]], DominanceMode::Exact).is_err());
        let t = TabulatedStatistic(vec![0.0, 1.0]);
        assert!(joint_dominance_check(&s, &f, &w, &[&t], &[vec![0.0]], DominanceMode::Exact).is_err());
        assert!(joint_dominance_check(&s, &f, &w, &[&t, &t], &[vec![0.5]], DominanceMode::Exact).is_err());
        assert!(PotentialOutcomeTable::per_element(vec![vec![vec![0.0]], vec![vec![0.0, 1.0]]]).is_err());
    }
}
