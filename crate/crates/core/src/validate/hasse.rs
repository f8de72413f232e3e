use std::collections::{BTreeMap, BTreeSet};

use super::space::{all_pairs_nested, FiniteAssignmentSpace, PartitionFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HasseNode {
    /// Sorted element indices.
    pub cell: Vec<usize>,
    /// Partitions having this cell, `K(S)`.
    pub partitions: BTreeSet<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Covering relation of `⊃` on the distinct cells of all partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HasseDiagram {
    nodes: Vec<HasseNode>,
    n_partitions: usize,
}

/// Builds the diagram of a nested family. Under nestedness the strict
/// supersets of a cell form a chain, so every cell has at most one parent.
pub fn build_hasse(family: &PartitionFamily) -> Result<HasseDiagram> {
    if let Err(c) = all_pairs_nested(family) {
        let (cell_j, cell_k) = c.counterexample.unwrap_or_default();
        return Err(Error::NotNested { j: c.j, k: c.k, cell_j, cell_k });
    }
    let mut by_cell: BTreeMap<Vec<usize>, BTreeSet<usize>> = BTreeMap::new();
    for (k, p) in family.partitions().iter().enumerate() {
        for cell in p.cells() {
            by_cell.entry(cell).or_default().insert(k);
        }
    }
    // Larger cells first, so a parent always precedes its children.
    let mut cells: Vec<(Vec<usize>, BTreeSet<usize>)> = by_cell.into_iter().collect();
    cells.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let n = family.n_elements();
    // For each element, the chain of nodes containing it, outermost first.
    let mut chain_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut nodes: Vec<HasseNode> = Vec::with_capacity(cells.len());
    for (idx, (cell, partitions)) in cells.into_iter().enumerate() {
        let parent = chain_of[cell[0]].last().copied();
        for &z in &cell {
            chain_of[z].push(idx);
        }
        if let Some(p) = parent {
            nodes[p].children.push(idx);
        }
        nodes.push(HasseNode { cell, partitions, parent, children: Vec::new() });
    }
    Ok(HasseDiagram { nodes, n_partitions: family.len() })
}

impl HasseDiagram {
    pub fn nodes(&self) -> &[HasseNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_none()).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.children.iter().map(move |&c| (i, c)))
            .collect()
    }

    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[i].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = self.nodes[i].children.clone();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(&self.nodes[c].children);
        }
        out.sort_unstable();
        out
    }

    fn k_of(&self, ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().flat_map(|&i| self.nodes[i].partitions.iter().copied()).collect()
    }

    /// Checks the structural properties of the diagram: children partition
    /// their parent; `K(an(S))`, `K(S)` and `K(de(S))` partition the index
    /// set; and `K(an(S')) = K(an(S)) ∪ K(S)` for every child `S'` of `S`.
    pub fn check_structure(&self) -> std::result::Result<(), String> {
        let all: BTreeSet<usize> = (0..self.n_partitions).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.children.is_empty() {
                let mut covered: Vec<usize> =
                    node.children.iter().flat_map(|&c| self.nodes[c].cell.iter().copied()).collect();
                covered.sort_unstable();
                if covered != node.cell {
                    return Err(format!("children of node {i} do not partition it"));
                }
            }
            let an = self.k_of(&self.ancestors(i));
            let de = self.k_of(&self.descendants(i));
            let own = &node.partitions;
            let disjoint = an.is_disjoint(own) && an.is_disjoint(&de) && own.is_disjoint(&de);
            let union: BTreeSet<usize> = an.iter().chain(own).chain(&de).copied().collect();
            if !disjoint || union != all {
                return Err(format!(
                    "node {i}: K(an) = {an:?}, K(S) = {own:?}, K(de) = {de:?} do not partition the tests"
                ));
            }
            for &c in &node.children {
                let child_an = self.k_of(&self.ancestors(c));
                let expected: BTreeSet<usize> = an.union(own).copied().collect();
                if child_an != expected {
                    return Err(format!("child {c} of node {i}: K(an) = {child_an:?}, expected {expected:?}"));
                }
            }
        }
        Ok(())
    }

    /// Nodes and edges in terms of element labels, independent of element
    /// order and of how cells were labelled.
    pub fn canonical(&self, space: &FiniteAssignmentSpace) -> (BTreeSet<(Vec<String>, Vec<usize>)>, BTreeSet<(Vec<String>, Vec<String>)>) {
        let names = |i: usize| {
            let mut v: Vec<String> = self.nodes[i].cell.iter().map(|&z| space.label(z).to_string()).collect();
            v.sort();
            v
        };
        let nodes = (0..self.nodes.len())
            .map(|i| (names(i), self.nodes[i].partitions.iter().copied().collect()))
            .collect();
        let edges = self.edges().into_iter().map(|(a, b)| (names(a), names(b))).collect();
        (nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::space::Partition;
    use proptest::prelude::*;

    fn fam(parts: &[&[u8]]) -> PartitionFamily {
        PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap()
    }

    #[test]
    fn trivial_partition_is_a_single_node() {
        let h = build_hasse(&fam(&[&[0, 0, 0]])).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.edges().is_empty());
        h.check_structure().unwrap();
    }

    #[test]
    fn sequential_chain() {
        let h = build_hasse(&fam(&[&[0; 8], &[0, 0, 0, 0, 1, 1, 1, 1], &[0, 0, 1, 1, 2, 2, 3, 3]])).unwrap();
        h.check_structure().unwrap();
        assert_eq!(h.len(), 7);
        assert_eq!(h.roots().len(), 1);
        // Each root-to-leaf path visits the tests in order.
        for leaf in (0..h.len()).filter(|&i| h.nodes()[i].children.is_empty()) {
            let mut ks: Vec<usize> = h.ancestors(leaf).iter().rev().flat_map(|&a| h.nodes()[a].partitions.clone()).collect();
            ks.extend(&h.nodes()[leaf].partitions);
            assert_eq!(ks, vec![0, 1, 2]);
        }
    }

    #[test]
    fn shared_cells_merge() {
        // Cell {2, 3} belongs to both partitions.
        let h = build_hasse(&fam(&[&[0, 0, 1, 1], &[0, 1, 2, 2]])).unwrap();
        h.check_structure().unwrap();
        let shared = h.nodes().iter().find(|n| n.cell == vec![2, 3]).unwrap();
        assert_eq!(shared.partitions, BTreeSet::from([0, 1]));
        assert_eq!(h.len(), 4);
        assert_eq!(h.roots().len(), 2);
    }

    #[test]
    fn non_nested_family_is_rejected() {
        match build_hasse(&fam(&[&[0, 0, 1, 1], &[0, 1, 1, 0]])) {
            Err(Error::NotNested { j: 0, k: 1, cell_j, cell_k }) => {
                assert!(!cell_j.is_empty() && !cell_k.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn nested_family() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<usize>)> {
        // Successive refinements of a random labelling, in random order.
        (2usize..9).prop_flat_map(|n| {
            (prop::collection::vec(prop::collection::vec(0u8..2, n), 1..4), Just(n)).prop_flat_map(|(bits, n)| {
                let parts: Vec<Vec<u8>> = (0..bits.len())
                    .map(|k| (0..n).map(|z| (0..=k).fold(0u8, |acc, j| acc * 2 + bits[j][z])).collect())
                    .collect();
                (Just(parts), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            })
        })
    }

    proptest! {
        #[test]
        fn diagram_is_invariant_under_reordering((parts, order) in nested_family()) {
            let f = PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().copied())).collect()).unwrap();
            let labels: Vec<String> = (0..f.n_elements()).map(|z| format!("z{z}")).collect();
            let space = FiniteAssignmentSpace::uniform(labels).unwrap();
            let h = build_hasse(&f).unwrap();
            h.check_structure().unwrap();
            let h2 = build_hasse(&f.reordered(&order)).unwrap();
            h2.check_structure().unwrap();
            prop_assert_eq!(h.canonical(&space), h2.canonical(&space.reordered(&order)));
            // Relabelling cells changes nothing.
            let relabelled = PartitionFamily::new(parts.iter().map(|p| Partition::from_labels(p.iter().map(|v| 200 - v))).collect()).unwrap();
            prop_assert_eq!(build_hasse(&relabelled).unwrap(), h);
        }
    }
}
