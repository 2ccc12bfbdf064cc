//! Chordal extension by minimum-degree elimination and clique trees.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Bags with a tree over them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDecomposition {
    pub bags: Vec<Vec<usize>>,
    /// Undirected edges between bag indices.
    pub tree: Vec<(usize, usize)>,
}

impl TreeDecomposition {
    pub fn vertex_coverage(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for b in &self.bags {
            for &v in b {
                if v < n {
                    seen[v] = true;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn edge_coverage(&self, edges: &[(usize, usize)]) -> bool {
        edges.iter().all(|&(a, b)| self.bags.iter().any(|bag| bag.contains(&a) && bag.contains(&b)))
    }

    /// Bags containing any given vertex induce a connected subtree.
    pub fn running_intersection(&self, n: usize) -> bool {
        let q = self.bags.len();
        if q > 0 && self.tree.len() + 1 != q {
            return false;
        }
        for v in 0..n {
            let holding: Vec<usize> = (0..q).filter(|&i| self.bags[i].contains(&v)).collect();
            if holding.len() <= 1 {
                continue;
            }
            // flood fill restricted to bags holding v
            let mut reached = vec![false; q];
            let mut stack = vec![holding[0]];
            reached[holding[0]] = true;
            while let Some(i) = stack.pop() {
                for &(a, b) in &self.tree {
                    let other = if a == i {
                        b
                    } else if b == i {
                        a
                    } else {
                        continue;
                    };
                    if !reached[other] && self.bags[other].contains(&v) {
                        reached[other] = true;
                        stack.push(other);
                    }
                }
            }
            if holding.iter().any(|&i| !reached[i]) {
                return false;
            }
        }
        true
    }
}

/// Maximal cliques of the chordal extension produced by minimum-degree
/// elimination (ties to the lowest vertex index), each sorted.
pub fn chordal_bags(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let mut alive = vec![true; n];
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n).filter(|&k| alive[k]).min_by_key(|&k| (adj[k].len(), k)).expect("vertex left");
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        let mut clique = nbrs.clone();
        clique.push(v);
        clique.sort_unstable();
        candidates.push(clique);
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
            adj[a].remove(&v);
        }
        adj[v].clear();
        alive[v] = false;
    }
    // keep maximal candidates; a candidate contained in another is merged away
    let mut bags: Vec<Vec<usize>> = Vec::new();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(candidates[i].len()));
    for i in order {
        let c = &candidates[i];
        if !bags.iter().any(|b| is_subset(c, b)) {
            bags.push(c.clone());
        }
    }
    bags.sort();
    bags
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.binary_search(x).is_ok()).count()
}

/// Clique tree: maximum-weight spanning tree of the clique intersection
/// graph (Prim), which has the running intersection property for the
/// cliques of a chordal graph.
pub fn tree_decomposition(n: usize, edges: &[(usize, usize)]) -> TreeDecomposition {
    let bags = chordal_bags(n, edges);
    let q = bags.len();
    let mut tree = Vec::with_capacity(q.saturating_sub(1));
    if q > 1 {
        let mut in_tree = vec![false; q];
        in_tree[0] = true;
        // best[i] = (weight, parent)
        let mut best: Vec<(usize, usize)> = (0..q).map(|i| (overlap(&bags[0], &bags[i]), 0)).collect();
        for _ in 1..q {
            let next = (0..q).filter(|&i| !in_tree[i]).max_by_key(|&i| (best[i].0, std::cmp::Reverse(i))).unwrap();
            in_tree[next] = true;
            tree.push((best[next].1, next));
            for i in 0..q {
                if !in_tree[i] {
                    let w = overlap(&bags[next], &bags[i]);
                    if w > best[i].0 {
                        best[i] = (w, next);
                    }
                }
            }
        }
    }
    TreeDecomposition { bags, tree }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_gives_edge_bags() {
        assert_eq!(chordal_bags(3, &[(0, 1), (1, 2)]), vec![vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn triangle_is_one_bag() {
        assert_eq!(chordal_bags(3, &[(0, 1), (1, 2), (0, 2)]), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn cycle_gets_chordal_fill() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0)];
        let td = tree_decomposition(4, &edges);
        assert_eq!(td.bags.len(), 2);
        assert!(td.bags.iter().all(|b| b.len() == 3));
        assert!(td.vertex_coverage(4));
        assert!(td.edge_coverage(&edges));
        assert!(td.running_intersection(4));
    }

    #[test]
    fn isolated_vertex_has_own_bag() {
        let td = tree_decomposition(3, &[(0, 1)]);
        assert_eq!(td.bags, vec![vec![0, 1], vec![2]]);
        assert!(td.vertex_coverage(3) && td.running_intersection(3));
    }

    #[test]
    fn broken_tree_fails_running_intersection() {
        let td = TreeDecomposition { bags: vec![vec![0, 1], vec![2, 3], vec![1, 2]], tree: vec![(0, 1), (1, 2)] };
        assert!(!td.running_intersection(4));
        assert!(td.edge_coverage(&[(1, 2)]));
        assert!(!td.edge_coverage(&[(0, 3)]));
    }
}
