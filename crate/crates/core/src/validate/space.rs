use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};

use crate::error::{Error, Result};

/// Enumerated assignment space with exact, positive probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAssignmentSpace {
    labels: Vec<String>,
    probs: Vec<BigRational>,
}

impl FiniteAssignmentSpace {
    pub fn new(labels: Vec<String>, probs: Vec<BigRational>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("assignment space is empty".into()));
        }
        if labels.len() != probs.len() {
            return Err(Error::Validation(format!(
                "{} elements but {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        let distinct: BTreeSet<&String> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::Validation("element labels must be distinct".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_positive()) {
            return Err(Error::Validation(format!("element `{}` has probability {}", labels[i], probs[i])));
        }
        let total: BigRational = probs.iter().sum();
        if !total.is_one() {
            return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { labels, probs })
    }

    pub fn uniform(labels: Vec<String>) -> Result<Self> {
        let n = labels.len().max(1);
        let p = BigRational::new(BigInt::one(), BigInt::from(n));
        Self::new(labels, vec![p; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, z: usize) -> &str {
        &self.labels[z]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prob(&self, z: usize) -> &BigRational {
        &self.probs[z]
    }

    pub fn probs(&self) -> &[BigRational] {
        &self.probs
    }

    pub fn mass(&self, cell: &[usize]) -> BigRational {
        cell.iter().map(|&z| &self.probs[z]).sum()
    }

    /// Same space with elements in the order given by `order`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            probs: order.iter().map(|&i| self.probs[i].clone()).collect(),
        }
    }
}

/// A partition given by one cell label per element. Labels are canonical:
/// cells are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    n_cells: usize,
}

impl Partition {
    pub fn from_labels<L: Hash + Eq>(raw: impl IntoIterator<Item = L>) -> Self {
        let mut ids = HashMap::new();
        let labels: Vec<usize> = raw
            .into_iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect();
        Self { n_cells: ids.len(), labels }
    }

    /// The one-cell partition.
    pub fn trivial(n: usize) -> Self {
        Self::from_labels(std::iter::repeat_n(0u8, n))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn label(&self, z: usize) -> usize {
        self.labels[z]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.n_cells];
        for (z, &c) in self.labels.iter().enumerate() {
            cells[c].push(z);
        }
        cells
    }

    pub fn cell_of(&self, z: usize) -> Vec<usize> {
        let c = self.labels[z];
        (0..self.len()).filter(|&y| self.labels[y] == c).collect()
    }

    /// Cells `S ∩ S'` over both partitions.
    pub fn meet(&self, other: &Self) -> Self {
        Self::from_labels(self.labels.iter().zip(&other.labels).map(|(&a, &b)| (a, b)))
    }

    /// Whether every cell of `self` lies inside a cell of `other`.
    pub fn refines(&self, other: &Self) -> bool {
        let mut up = vec![usize::MAX; self.n_cells];
        self.labels.iter().zip(&other.labels).all(|(&a, &b)| {
            if up[a] == usize::MAX {
                up[a] = b;
            }
            up[a] == b
        })
    }

    /// Same partition on a reordered element list.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self::from_labels(order.iter().map(|&i| self.labels[i]))
    }
}

/// `K` partitions of one space.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionFamily {
    partitions: Vec<Partition>,
}

impl PartitionFamily {
    pub fn new(partitions: Vec<Partition>) -> Result<Self> {
        let Some(first) = partitions.first() else {
            return Err(Error::Validation("partition family is empty".into()));
        };
        if let Some(k) = partitions.iter().position(|p| p.len() != first.len()) {
            return Err(Error::Validation(format!(
                "partition {} labels {} elements, partition 1 labels {}",
                k + 1,
                partitions[k].len(),
                first.len()
            )));
        }
        Ok(Self { partitions })
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.partitions[0].len()
    }

    pub fn get(&self, k: usize) -> &Partition {
        &self.partitions[k]
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::Validation("index set is empty".into()));
        }
        if let Some(&k) = subset.iter().find(|&&k| k >= self.len()) {
            return Err(Error::Validation(format!("partition index {k} out of range")));
        }
        Ok(())
    }

    /// Cells `∩_{j in J} S^(j)_z`.
    pub fn refinement(&self, subset: &[usize]) -> Result<Partition> {
        self.check_subset(subset)?;
        Ok(subset[1..]
            .iter()
            .fold(self.partitions[subset[0]].clone(), |acc, &k| acc.meet(&self.partitions[k])))
    }

    /// Distinct cells `∪_{j in J} S^(j)_z`. Not necessarily a partition.
    pub fn coarsening(&self, subset: &[usize]) -> Result<Vec<Vec<usize>>> {
        self.check_subset(subset)?;
        let cells_by_k: Vec<Vec<Vec<usize>>> = subset.iter().map(|&k| self.partitions[k].cells()).collect();
        let mut seen = BTreeSet::new();
        for z in 0..self.n_elements() {
            let mut union = BTreeSet::new();
            for (pos, &k) in subset.iter().enumerate() {
                union.extend(cells_by_k[pos][self.partitions[k].label(z)].iter().copied());
            }
            seen.insert(union.into_iter().collect::<Vec<_>>());
        }
        Ok(seen.into_iter().collect())
    }

    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            partitions: self.partitions.iter().map(|p| p.reordered(order)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionCheck {
    pub ok: bool,
    /// An element covered twice or not at all.
    pub witness: Option<usize>,
    pub reason: Option<String>,
}

/// Whether `cells` are disjoint and cover `0..n`.
pub fn is_partition(n: usize, cells: &[Vec<usize>]) -> PartitionCheck {
    let mut owner = vec![None; n];
    for (c, cell) in cells.iter().enumerate() {
        if cell.is_empty() {
            return PartitionCheck { ok: false, witness: None, reason: Some(format!("cell {c} is empty")) };
        }
        for &z in cell {
            if z >= n {
                return PartitionCheck { ok: false, witness: Some(z), reason: Some(format!("element {z} is outside the space")) };
            }
            if let Some(prev) = owner[z] {
                if prev != c {
                    return PartitionCheck {
                        ok: false,
                        witness: Some(z),
                        reason: Some(format!("element {z} lies in cells {prev} and {c}")),
                    };
                }
            }
            owner[z] = Some(c);
        }
    }
    match owner.iter().position(Option::is_none) {
        Some(z) => PartitionCheck { ok: false, witness: Some(z), reason: Some(format!("element {z} is not covered")) },
        None => PartitionCheck { ok: true, witness: None, reason: None },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedCheck {
    pub j: usize,
    pub k: usize,
    pub nested: bool,
    /// Two cells that overlap without either containing the other.
    pub counterexample: Option<(Vec<usize>, Vec<usize>)>,
}

/// Whether every cell of partition `j` and every cell of partition `k` are
/// disjoint or nested.
pub fn pairwise_nested_check(family: &PartitionFamily, j: usize, k: usize) -> NestedCheck {
    let (pj, pk) = (family.get(j), family.get(k));
    let (cj, ck) = (pj.cells(), pk.cells());
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for z in 0..family.n_elements() {
        *counts.entry((pj.label(z), pk.label(z))).or_default() += 1;
    }
    let mut bad: Vec<_> = counts
        .iter()
        .filter(|&(&(a, b), &c)| c != cj[a].len() && c != ck[b].len())
        .map(|(&ab, _)| ab)
        .collect();
    bad.sort_unstable();
    NestedCheck {
        j,
        k,
        nested: bad.is_empty(),
        counterexample: bad.first().map(|&(a, b)| (cj[a].clone(), ck[b].clone())),
    }
}

/// Pairwise checks for all `j < k`; the first failing pair, if any.
pub fn all_pairs_nested(family: &PartitionFamily) -> std::result::Result<(), NestedCheck> {
    for j in 0..family.len() {
        for k in j + 1..family.len() {
            let c = pairwise_nested_check(family, j, k);
            if !c.nested {
                return Err(c);
            }
        }
    }
    Ok(())
}

/// Whether every cell in `cells` is a cell of some partition of the family.
pub fn cells_in_union(family: &PartitionFamily, cells: &[Vec<usize>]) -> bool {
    let union: BTreeSet<Vec<usize>> = family.partitions().iter().flat_map(|p| p.cells()).collect();
    cells.iter().all(|c| {
        let mut c = c.clone();
        c.sort_unstable();
        union.contains(&c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn fam(parts: &[&[u8]]) -> PartitionFamily {
        PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap()
    }

    #[test]
    fn space_validation() {
        let labels: Vec<String> = ["a", "b"].map(String::from).to_vec();
        let half = BigRational::new(1.into(), 2.into());
        assert!(FiniteAssignmentSpace::new(labels.clone(), vec![half.clone(), half.clone()]).is_ok());
        assert!(FiniteAssignmentSpace::new(labels.clone(), vec![half.clone(), half.clone() / BigInt::from(2)]).is_err());
        assert!(FiniteAssignmentSpace::new(labels.clone(), vec![BigRational::one(), BigRational::zero()]).is_err());
        assert!(FiniteAssignmentSpace::new(vec!["a".into(), "a".into()], vec![half.clone(), half]).is_err());
        assert_eq!(FiniteAssignmentSpace::uniform(labels).unwrap().prob(1), &BigRational::new(1.into(), 2.into()));
    }

    #[test]
    fn partition_checks() {
        assert!(is_partition(3, &[vec![0, 1, 2]]).ok);
        let r = is_partition(3, &[vec![0, 1], vec![1, 2]]);
        assert!(!r.ok);
        assert_eq!(r.witness, Some(1));
        assert_eq!(is_partition(3, &[vec![0, 1]]).witness, Some(2));
        // Cells assigned per element without an equivalence relation: each
        // element is grouped with its successor on a 4-cycle.
        let per_element: BTreeSet<Vec<usize>> = (0..4).map(|z| {
            let mut c = vec![z, (z + 1) % 4];
            c.sort_unstable();
            c
        }).collect();
        let cells: Vec<Vec<usize>> = per_element.into_iter().collect();
        assert!(!is_partition(4, &cells).ok);
    }

    #[test]
    fn nestedness_examples() {
        let f = fam(&[&[0, 0, 1, 1], &[5, 5, 6, 6], &[0, 1, 2, 2], &[0, 1, 1, 0]]);
        assert!(pairwise_nested_check(&f, 0, 1).nested);
        assert!(pairwise_nested_check(&f, 0, 2).nested);
        let bad = pairwise_nested_check(&f, 0, 3);
        assert!(!bad.nested);
        let (a, b) = bad.counterexample.unwrap();
        let inter: Vec<_> = a.iter().filter(|z| b.contains(z)).collect();
        assert!(!inter.is_empty() && inter.len() < a.len() && inter.len() < b.len());
        assert!(all_pairs_nested(&f).is_err());
    }

    #[test]
    fn refinement_and_coarsening() {
        let f = fam(&[&[0, 0, 1, 1], &[0, 1, 2, 2], &[0, 1, 1, 0]]);
        assert_eq!(f.refinement(&[1]).unwrap(), *f.get(1));
        // Nested pair: the refinement is the finer partition.
        assert_eq!(f.refinement(&[0, 1]).unwrap(), *f.get(1));
        assert!(f.get(1).refines(f.get(0)));
        assert!(!f.get(0).refines(f.get(1)));
        let coarse = f.coarsening(&[0, 1]).unwrap();
        assert!(is_partition(4, &coarse).ok);
        assert!(cells_in_union(&f, &coarse));
        assert!(cells_in_union(&f, &f.refinement(&[0, 1]).unwrap().cells()));
        // Non-nested pair: the unions overlap.
        let coarse = f.coarsening(&[0, 2]).unwrap();
        assert!(!is_partition(4, &coarse).ok);
        assert!(f.refinement(&[]).is_err());
    }

    fn labels_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
        (2usize..10).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u8..3, n), 3))
    }

    proptest! {
        #[test]
        fn refinement_is_associative(parts in labels_strategy()) {
            let f = PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap();
            let step = Partition::meet(&f.refinement(&[0]).unwrap(), &f.refinement(&[1, 2]).unwrap());
            let whole = f.refinement(&[0, 1, 2]).unwrap();
            prop_assert_eq!(step, whole.clone());
            prop_assert!(is_partition(whole.len(), &whole.cells()).ok);
            prop_assert!(whole.refines(f.get(1)));
        }

        #[test]
        fn nestedness_matches_set_definition(parts in labels_strategy()) {
            let f = PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap();
            let (a, b) = (f.get(0).cells(), f.get(1).cells());
            let direct = a.iter().all(|s| b.iter().all(|t| {
                let n = s.iter().filter(|z| t.contains(z)).count();
                n == 0 || n == s.len() || n == t.len()
            }));
            prop_assert_eq!(pairwise_nested_check(&f, 0, 1).nested, direct);
        }
    }
}
